//! Unrolled learned solvers: LISTA, LISTA-CP, LISTA-VM and LISTA-VM-SS.

mod forward;
mod grad;
mod params;
mod theory;
mod train;

pub use forward::{
    default_normalizer, estimate, learned_trace, lista_cp_forward, lista_forward, lista_vm_forward,
    lista_vm_ss_forward, SupportMask,
};
pub use grad::{batch_loss, grad_unrolled, unroll_for_checks, Example, Gradient};
pub use params::{LearnedParams, ListaCpParams, ListaParams, ListaVmParams, ModelKind};
pub use theory::{theory_params, theory_params_with_schedule, GAMMA_MAX};
pub use train::{
    evaluate, init_params, meta_train, EpochRecord, EvalStats, Optimizer, TestSet, TrainConfig,
    TrainResult, training_matrix,
};
