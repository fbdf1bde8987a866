//! Sequence learners built on the GSN chain.

mod level;
mod lstm_baseline;
mod recurrent;
mod rnn_gsn;
mod sen;
mod tgsn;
mod transition;
mod untied;

pub use level::default_taps;
pub use lstm_baseline::{
    lstm_baseline_loss_and_grads, lstm_baseline_step, lstm_baseline_train_step, LstmBaseline,
    LstmPredictor,
};
pub use rnn_gsn::{
    rnngsn_loss_and_grads, rnngsn_train_step, RnnGsnGrads, RnnGsnModel, RnnGsnPredictor, RnnGsnStep,
};
pub use sen::{
    sen_forward, sen_loss_and_grads, sen_term_grads, sen_train_step, SenForward, SenLevel, SenLosses, SenPredictor,
    SenStack,
};
pub use tgsn::{
    tgsn_em_epoch, tgsn_em_pass, tgsn_step_loss_and_grads, tgsn_warmup_gate, TgsnEpochLosses, TgsnModel, TgsnPredictor,
    TgsnPhase,
};
pub use transition::{transition_predict, LinearTransition};
pub use untied::{
    sequential_walkback_pairs, untied_chain_loss_and_grads, untied_gsn_online_step, Prediction,
    PredictionBuffer, UntiedGsnModel, UntiedPredictor, UntiedState, UntiedStepOutput,
};
