//! Runs every example at a reduced size.

#[path = "../examples/bouncing_balls.rs"]
mod bouncing_balls;
#[path = "../examples/checkpoint_resume.rs"]
mod checkpoint_resume;
#[path = "../examples/denoising_autoencoder.rs"]
mod denoising_autoencoder;
#[path = "../examples/gradient_check.rs"]
mod gradient_check;
#[path = "../examples/gsn_sampling.rs"]
mod gsn_sampling;
#[path = "../examples/lstm_baseline_balls.rs"]
mod lstm_baseline_balls;
#[path = "../examples/mocap_prediction.rs"]
mod mocap_prediction;
#[path = "../examples/rnn_gsn.rs"]
mod rnn_gsn;
#[path = "../examples/sequence_encoder_network.rs"]
mod sequence_encoder_network;
#[path = "../examples/tgsn_sequenced_digits.rs"]
mod tgsn_sequenced_digits;
#[path = "../examples/untied_gsn_rnn.rs"]
mod untied_gsn_rnn;

#[test]
fn denoising_autoencoder_improves() {
    let (before, after) = denoising_autoencoder::run_example().unwrap();
    assert!(after < 0.8 * before, "{before} -> {after}");
}

#[test]
fn gsn_sampling_writes_pgm() {
    let d = tempfile::tempdir().unwrap();
    let p = gsn_sampling::run_example(d.path()).unwrap();
    let bytes = std::fs::read(p).unwrap();
    assert!(bytes.starts_with(b"P5\n"));
}

#[test]
fn tgsn_runs() {
    let bce = tgsn_sequenced_digits::run_example(2).unwrap();
    assert_eq!(bce.len(), 2);
    assert!(bce.iter().all(|b| b.is_finite()));
}

#[test]
fn untied_gsn_runs() {
    let (mse, naive) = untied_gsn_rnn::run_example(1).unwrap();
    assert!(mse.is_finite() && naive > 0.0);
}

#[test]
fn rnn_gsn_runs() {
    assert!(rnn_gsn::run_example(1).unwrap().is_finite());
}

#[test]
fn sen_runs() {
    assert!(sequence_encoder_network::run_example(1).unwrap().is_finite());
}

#[test]
fn bouncing_balls_conserve_energy() {
    let d = tempfile::tempdir().unwrap();
    let (drift, p) = bouncing_balls::run_example(d.path()).unwrap();
    assert!(drift < 1e-9, "{drift}");
    assert!(p.exists());
}

#[test]
fn lstm_baseline_runs() {
    let (mse, naive) = lstm_baseline_balls::run_example(1).unwrap();
    assert!(mse.is_finite() && naive > 0.0);
}

#[test]
fn mocap_runs() {
    let (mse, naive) = mocap_prediction::run_example(1).unwrap();
    assert!(mse.is_finite() && naive > 0.0);
}

#[test]
fn gradient_check_passes() {
    assert!(gradient_check::run_example(2).unwrap() <= gsn_seq::harness::GRADCHECK_TOLERANCE);
}

#[test]
fn checkpoint_resume_is_exact() {
    let d = tempfile::tempdir().unwrap();
    assert!(checkpoint_resume::run_example(d.path()).unwrap());
}
