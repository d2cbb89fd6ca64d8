use crate::contracts::{arg_int, Contract, ContractContext, ContractError};
use crate::ledger::Value;

/// Sorts a descending array in-contract; one step per comparison.
pub struct CpuHeavy;

/// Position-weighted checksum `sum((i + 1) * a[i])`, wrapping.
pub fn checksum(a: &[i64]) -> u64 {
    a.iter()
        .enumerate()
        .fold(0u64, |acc, (i, &x)| acc.wrapping_add((i as u64 + 1).wrapping_mul(x as u64)))
}

/// Iterative quicksort with a median-of-three pivot and Hoare partitioning.
/// Calls `on_compare` with the number of comparisons made since the last
/// call so callers can meter as they go.
pub fn quicksort<E>(a: &mut [i64], mut on_compare: impl FnMut(u64) -> Result<(), E>) -> Result<(), E> {
    let mut stack = vec![(0usize, a.len())];
    let mut pending = 0u64;
    while let Some((lo, hi)) = stack.pop() {
        if hi - lo < 2 {
            continue;
        }
        let mid = lo + (hi - lo) / 2;
        let last = hi - 1;
        // Median of a[lo], a[mid], a[last] moved to a[lo].
        let m = if (a[lo] <= a[mid]) == (a[mid] <= a[last]) {
            mid
        } else if (a[mid] <= a[lo]) == (a[lo] <= a[last]) {
            lo
        } else {
            last
        };
        pending += 3;
        a.swap(lo, m);
        let pivot = a[lo];
        let (mut i, mut j) = (lo, hi);
        let split = loop {
            // First pass starts at lo itself, which equals the pivot.
            loop {
                pending += 1;
                if a[i] >= pivot {
                    break;
                }
                i += 1;
            }
            loop {
                j -= 1;
                pending += 1;
                if a[j] <= pivot {
                    break;
                }
            }
            if i >= j {
                break j + 1;
            }
            a.swap(i, j);
            i += 1;
        };
        stack.push((lo, split));
        stack.push((split, hi));
        if pending >= 1024 {
            on_compare(pending)?;
            pending = 0;
        }
    }
    on_compare(pending)
}

impl Contract for CpuHeavy {
    fn kind(&self) -> &'static str {
        "cpuheavy"
    }

    fn call(&self, ctx: &mut ContractContext<'_>, method: &str, args: &[Value]) -> Result<Vec<Value>, ContractError> {
        if method != "sort" {
            return Err(ContractError::UnknownMethod { contract: self.kind().into(), method: method.into() });
        }
        let n = arg_int(args, 0, "n")?;
        if n < 0 {
            return Err(ContractError::BadArgs("negative array size".into()));
        }
        ctx.charge(n as u64)?;
        let mut a: Vec<i64> = (1..=n).rev().collect();
        quicksort(&mut a, |c| ctx.charge(c))?;
        Ok(vec![Value::Int(checksum(&a) as i64)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sort(mut v: Vec<i64>) -> (Vec<i64>, u64) {
        let mut steps = 0;
        quicksort::<()>(&mut v, |c| {
            steps += c;
            Ok(())
        })
        .unwrap();
        (v, steps)
    }

    #[test]
    fn sorts_assorted_inputs() {
        for input in [vec![], vec![1], vec![2, 1], vec![3, 3, 3], vec![5, 1, 4, 1, 5, 9, 2, 6], (1..=100).rev().collect()] {
            let mut expect = input.clone();
            expect.sort();
            assert_eq!(sort(input).0, expect);
        }
    }

    #[test]
    fn descending_input_is_n_log_n() {
        let (_, s1) = sort((1..=1 << 12).rev().collect());
        let (_, s2) = sort((1..=1 << 13).rev().collect());
        assert!((s2 as f64) / (s1 as f64) <= 2.6, "{s1} -> {s2}");
    }
}
