//! Disparity and image codecs, and the synthetic stereogram generator.

mod gray;
pub mod kitti;
pub mod pfm;
pub mod stereogram;

pub use gray::{load_gray, save_gray, GrayImage};
pub use kitti::{read_kitti_disp_png, write_kitti_disp_png};
pub use pfm::{read_pfm, write_pfm};
pub use stereogram::{generate_stereogram, DisparitySpec, Stereogram, StereogramSpec};
