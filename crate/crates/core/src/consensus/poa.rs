//! Round-robin authority slots.

use crate::hash::Hash256;
use crate::ledger::{Block, Certificate, NodeId, Principal, Signer};

pub fn slot_of(time: u64, step_duration: u64) -> u64 {
    time / step_duration.max(1)
}

/// `authorities[(slot_time / step) mod |authorities|]`.
pub fn poa_proposer(slot_time: u64, authorities: &[NodeId], step_duration: u64) -> NodeId {
    assert!(!authorities.is_empty(), "authority list is empty");
    authorities[(slot_of(slot_time, step_duration) % authorities.len() as u64) as usize]
}

pub fn authority_signature(signer: &dyn Signer, who: NodeId, block_hash: &Hash256) -> Certificate {
    Certificate::Authority { signature: signer.sign(Principal::Node(who.0), block_hash) }
}

/// A block is acceptable when the slot of its timestamp belongs to its
/// proposer, the proposer signed it, and its slot is later than its
/// parent's.
pub fn poa_validate(
    block: &Block,
    parent: &Block,
    authorities: &[NodeId],
    step_duration: u64,
    signer: &dyn Signer,
) -> Result<(), String> {
    let Certificate::Authority { signature } = &block.cert else {
        return Err("expected an authority certificate".into());
    };
    let expected = poa_proposer(block.header.timestamp, authorities, step_duration);
    if block.header.proposer != expected {
        return Err(format!(
            "{} proposed in slot {} owned by {}",
            block.header.proposer,
            slot_of(block.header.timestamp, step_duration),
            expected
        ));
    }
    if !signer.verify(Principal::Node(expected.0), &block.hash(), signature) {
        return Err(format!("signature is not from {expected}"));
    }
    if !parent.is_genesis() && slot_of(block.header.timestamp, step_duration) <= slot_of(parent.header.timestamp, step_duration) {
        return Err("slot does not advance past the parent's".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auth(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn closed_form_slots() {
        let a = auth(4);
        let got: Vec<u32> = (0..5).map(|t| poa_proposer(t, &a, 1).0).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 0]);
        assert_eq!(poa_proposer(5, &a, 2), NodeId(2));
    }
}
