//! Optimization: contrastive pretraining of the encoder and supervised
//! fine-tuning of the article/charge/term heads.

mod batch;
mod classifier;
mod finetune;
mod optim;
mod pretrain;

pub use batch::{
    assemble_lcc_batch, assemble_ldm_batch, AnchorPools, AssembledBatch, BatchInstance, BatchPools,
    PretrainCorpus, SlotInstance, SlotText,
};
pub use classifier::{
    softmax_argmax, Classifier, ClassifierGrads, ClassifierHead, EncodedCase, Task, TaskPrediction,
};
pub use finetune::{finetune, FinetuneConfig, FinetuneReport};
pub use optim::{AdamW, AdamWConfig};
pub use pretrain::{
    pretrain, pretrain_loss_and_grads, pretrain_step, LossRow, PretrainConfig, PretrainReport,
    StepLosses, Views,
};
