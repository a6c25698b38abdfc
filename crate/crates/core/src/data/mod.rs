//! Synthetic paired-modality data, augmentation and file formats.

pub mod augment;
pub mod dataset;
pub mod io;
pub mod modality;
pub mod phantom;

pub use augment::{augment, augment_with, mixup, mixup_with, AugmentConfig, AugmentPlan};
pub use dataset::{make_dataset, Dataset, Direction, PairedSample};
pub use modality::{render_modality, ModalityProfile};
pub use phantom::{generate_phantom, ClassMap, PhantomSpec};
