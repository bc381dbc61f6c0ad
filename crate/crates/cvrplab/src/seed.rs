//! Deterministic seed derivation.
//!
//! Every randomized component takes a single root seed and derives
//! per-task seeds from it by mixing in small integer tags (run index,
//! instance index, start index, and so on). The scheme is a splitmix64
//! chain, so results do not depend on scheduling or iteration order.

/// One round of the splitmix64 output function.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and an ordered list of tags.
///
/// The same `(root, tags)` pair always yields the same seed, and distinct
/// tag lists yield independent-looking seeds.
pub fn derive(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &tag in tags {
        state = splitmix64(state ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    state
}
