//! On-disk formats: PPM (P6) frame sequences, CSV audio features, and
//! the AVCT checkpoint container.

pub mod audio_csv;
pub mod checkpoint;
pub mod ppm;
