//! Phantom generation, volume file formats and slice export.

mod montage;
mod nifti;
mod phantom;
mod rvol;

pub use montage::{encode_pgm, export_montage, label_gray, MontageSource};
pub use nifti::{decode as decode_nifti, read_nifti};
pub use phantom::{gen_phantom, Phantom, PhantomConfig};
pub use rvol::{
    decode as decode_rvol, encode as encode_rvol, read_mask, read_raw, read_volume, write_mask, write_raw, write_volume,
    Dtype, RawVolume, VoxelData,
};
