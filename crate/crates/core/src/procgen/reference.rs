//! Frozen test-set indices of the reference split. The sampler that produced
//! them is not recoverable, so the lists are shipped verbatim.

use crate::embodiment::MorphologyClass;

pub const HUMANOID_TEST: [usize; 70] = [
    0, 7, 12, 20, 31, 32, 37, 41, 46, 47, 48, 50, 51, 55, 63, 71, 72, 75, 97, 104, 111, 113, 122, 124,
    128, 132, 133, 144, 149, 154, 155, 158, 161, 163, 166, 169, 170, 181, 183, 197, 204, 207, 215,
    222, 226, 229, 241, 244, 248, 250, 252, 258, 260, 261, 266, 272, 276, 278, 280, 282, 286, 290,
    298, 308, 312, 313, 316, 320, 327, 342,
];

/// Shared by quadrupeds and hexapods.
pub const QUADRUPED_HEXAPOD_TEST: [usize; 67] = [
    0, 7, 8, 20, 31, 32, 37, 41, 46, 47, 48, 50, 51, 55, 71, 72, 75, 97, 104, 111, 113, 122, 124, 128,
    132, 133, 144, 149, 154, 155, 158, 161, 163, 166, 169, 170, 181, 183, 197, 204, 207, 215, 222, 226,
    229, 241, 244, 248, 250, 252, 258, 260, 261, 266, 272, 278, 280, 282, 286, 290, 298, 308, 312, 313,
    316, 320, 327,
];

pub fn reference_test_indices(class: MorphologyClass) -> &'static [usize] {
    match class {
        MorphologyClass::Humanoid => &HUMANOID_TEST,
        MorphologyClass::Quadruped | MorphologyClass::Hexapod => &QUADRUPED_HEXAPOD_TEST,
    }
}
