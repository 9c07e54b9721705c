use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and processes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub const ANCHOR_YEARS: std::ops::RangeInclusive<i32> = 2018..=2021;
pub const ANCHOR_DAY: u32 = 15;

/// Reference date for a tile: year and month drawn from a generator seeded
/// by the tile id hash, day pinned to the 15th.
pub fn temporal_anchor(tile_id: &str) -> NaiveDate {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(tile_id.as_bytes()));
    let year = rng.random_range(ANCHOR_YEARS);
    let month = rng.random_range(1..=12u32);
    NaiveDate::from_ymd_opt(year, month, ANCHOR_DAY).expect("day 15 exists in every month")
}
