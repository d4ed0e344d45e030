//! Domain-separated Merkle tree over transcript records.
//!
//! Leaves commit to their index (reorder resistance) and carry a 0x00 tag;
//! interior nodes carry 0x01 (second-preimage resistance). An unpaired node
//! at the end of a level is promoted to the next level unchanged, so paths
//! can skip levels; verification replays the promotion schedule from the
//! record count.

use crate::canonical::{sha256, Hash32};

pub fn leaf_hash(index: u32, record: &[u8]) -> Hash32 {
    let mut preimage = Vec::with_capacity(5 + record.len());
    preimage.push(0x00);
    preimage.extend_from_slice(&index.to_be_bytes());
    preimage.extend_from_slice(record);
    Hash32(sha256(&preimage))
}

pub fn node_hash(left: &Hash32, right: &Hash32) -> Hash32 {
    let mut preimage = Vec::with_capacity(65);
    preimage.push(0x01);
    preimage.extend_from_slice(&left.0);
    preimage.extend_from_slice(&right.0);
    Hash32(sha256(&preimage))
}

fn leaf_level(records: &[Vec<u8>]) -> Vec<Hash32> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| leaf_hash(i as u32, r))
        .collect()
}

fn parent_level(level: &[Hash32]) -> Vec<Hash32> {
    let mut parents = Vec::with_capacity(level.len().div_ceil(2));
    for pair in level.chunks(2) {
        match pair {
            [left, right] => parents.push(node_hash(left, right)),
            [promoted] => parents.push(*promoted),
            _ => unreachable!(),
        }
    }
    parents
}

pub fn merkle_root(records: &[Vec<u8>]) -> Hash32 {
    if records.is_empty() {
        return Hash32::zero();
    }
    let mut level = leaf_level(records);
    while level.len() > 1 {
        level = parent_level(&level);
    }
    level[0]
}

/// Sibling hashes from the leaf at `index` up to the root. Levels where the
/// node is promoted unpaired contribute nothing.
pub fn merkle_path(records: &[Vec<u8>], index: usize) -> Vec<Hash32> {
    assert!(index < records.len(), "index out of range");
    let mut path = Vec::new();
    let mut level = leaf_level(records);
    let mut pos = index;
    while level.len() > 1 {
        if pos % 2 == 1 {
            path.push(level[pos - 1]);
        } else if pos + 1 < level.len() {
            path.push(level[pos + 1]);
        }
        pos /= 2;
        level = parent_level(&level);
    }
    path
}

/// Authenticates one record against a root, given the total record count
/// (needed to replay where promotions happened). Consumes the path exactly;
/// leftover or missing siblings fail.
pub fn verify_inclusion(
    record: &[u8],
    index: usize,
    path: &[Hash32],
    root: &Hash32,
    record_count: usize,
) -> bool {
    if index >= record_count {
        return false;
    }
    let mut hash = leaf_hash(index as u32, record);
    let mut pos = index;
    let mut width = record_count;
    let mut siblings = path.iter();
    while width > 1 {
        if pos % 2 == 1 {
            let Some(left) = siblings.next() else {
                return false;
            };
            hash = node_hash(left, &hash);
        } else if pos + 1 < width {
            let Some(right) = siblings.next() else {
                return false;
            };
            hash = node_hash(&hash, right);
        }
        pos /= 2;
        width = width.div_ceil(2);
    }
    siblings.next().is_none() && hash == *root
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn records(n: usize) -> Vec<Vec<u8>> {
        (0..n).map(|i| format!("record-{i}").into_bytes()).collect()
    }

    #[test]
    fn single_record_root_is_its_leaf_hash() {
        let recs = records(1);
        assert_eq!(merkle_root(&recs), leaf_hash(0, &recs[0]));
        assert!(verify_inclusion(&recs[0], 0, &[], &merkle_root(&recs), 1));
    }

    #[test]
    fn two_record_root_matches_hand_computation() {
        // Independent oracle: raw sha2 calls, no tree code.
        let recs = records(2);
        let mut leaf0 = Sha256::new();
        leaf0.update([0u8]);
        leaf0.update(0u32.to_be_bytes());
        leaf0.update(&recs[0]);
        let mut leaf1 = Sha256::new();
        leaf1.update([0u8]);
        leaf1.update(1u32.to_be_bytes());
        leaf1.update(&recs[1]);
        let mut node = Sha256::new();
        node.update([1u8]);
        node.update(leaf0.finalize());
        node.update(leaf1.finalize());
        let expected: [u8; 32] = node.finalize().into();
        assert_eq!(merkle_root(&recs), Hash32(expected));
    }

    #[test]
    fn permuting_records_changes_the_root() {
        let recs = records(2);
        let swapped = vec![recs[1].clone(), recs[0].clone()];
        assert_ne!(merkle_root(&recs), merkle_root(&swapped));
    }

    #[test]
    fn duplicate_records_at_different_indices_hash_differently() {
        let twice = vec![b"same".to_vec(), b"same".to_vec()];
        assert_ne!(leaf_hash(0, &twice[0]), leaf_hash(1, &twice[1]));
    }

    #[test]
    fn all_paths_verify_for_sizes_one_through_twelve() {
        for n in 1..=12 {
            let recs = records(n);
            let root = merkle_root(&recs);
            for i in 0..n {
                let path = merkle_path(&recs, i);
                assert!(
                    verify_inclusion(&recs[i], i, &path, &root, n),
                    "size {n}, index {i}"
                );
            }
        }
    }

    #[test]
    fn wrong_record_index_path_or_count_fails() {
        let recs = records(5);
        let root = merkle_root(&recs);
        let path = merkle_path(&recs, 2);
        assert!(!verify_inclusion(b"other", 2, &path, &root, 5));
        assert!(!verify_inclusion(&recs[2], 3, &path, &root, 5));
        // A count of 4 leaves a sibling unconsumed, so the proof fails.
        // (Count comes from the signed commitment, never from the path.)
        assert!(!verify_inclusion(&recs[2], 2, &path, &root, 4));
        assert!(!verify_inclusion(&recs[2], 2, &path[..1], &root, 5));
        let mut longer = path.clone();
        longer.push(Hash32::zero());
        assert!(!verify_inclusion(&recs[2], 2, &longer, &root, 5));
        let mut mutated = path;
        mutated[0].0[7] ^= 0x01;
        assert!(!verify_inclusion(&recs[2], 2, &mutated, &root, 5));
    }

    #[test]
    fn promoted_node_consumes_no_sibling() {
        // With three records, index 2 is promoted at the first level: its
        // path has a single sibling (the hash of leaves 0 and 1).
        let recs = records(3);
        let path = merkle_path(&recs, 2);
        assert_eq!(path.len(), 1);
        assert!(verify_inclusion(&recs[2], 2, &path, &merkle_root(&recs), 3));
    }
}
