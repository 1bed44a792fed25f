//! Feature packs: the on-disk interchange unit for embeddings, plus a
//! synthetic generator that mimics the geometry of a joint image/text space.

mod pack;
mod synth;

pub use pack::{l2_normalize, read_pack, read_pack_file, write_pack, write_pack_file, FeaturePack, PackKind, PACK_MAGIC, PACK_VERSION};
pub use synth::{synth_generate, SynthConfig, SynthWorld};
