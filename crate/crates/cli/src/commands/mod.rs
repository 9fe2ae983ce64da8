pub mod eval;
pub mod finetune;
pub mod ingest;
pub mod preview;
pub mod pretrain;
pub mod sweep;
pub mod synth;
