use freqsynth::eval::{dot_test_stages, DotPattern};
use freqsynth::forward::simulate;
use freqsynth::pipeline::{train_pipeline, Dataset, PipelineCheckpoint, TrainConfig};
use freqsynth::synth::{object_ensemble, ObjectSpec};
use freqsynth::{ForwardConfig, ForwardKind, Raster};

fn dataset(kind: ForwardKind, count: usize) -> (Dataset, ForwardConfig) {
    let fwd = match kind {
        ForwardKind::Dli => ForwardConfig::dli(16, 3.0, 1e-6).unwrap(),
        ForwardKind::Qpr => ForwardConfig::qpr(
            16,
            ForwardConfig::DEFAULT_LAMBDA,
            ForwardConfig::DEFAULT_Z,
            ForwardConfig::default_qpr_pitch(16),
        )
        .unwrap(),
    };
    let spec = ObjectSpec {
        kind,
        n: 16,
        pitch: fwd.pitch,
        phi_max: std::f64::consts::PI,
    };
    let objects = object_ensemble(&spec, count, 3).unwrap();
    let meas: Vec<Raster> = objects.iter().map(|f| simulate(f, &fwd).unwrap()).collect();
    (Dataset::new(objects, meas).unwrap(), fwd)
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn dli_training_improves_and_reloads_bitwise() {
    let (data, fwd) = dataset(ForwardKind::Dli, 20);
    let ck = train_pipeline(&data, &fwd, 1.5, &cfg(3), 5).unwrap();
    let l = ck.curves[0].train();
    assert_eq!(l.len(), 3);
    assert!(l[2] < l[0], "DNN-L training NPCC should fall: {l:?}");

    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let back = PipelineCheckpoint::load(dir.path()).unwrap();
    assert_eq!(back.split, ck.split);
    let g = &data.measurements[ck.split.val[0]];
    let (a, b) = (ck.reconstruct(g).unwrap(), back.reconstruct(g).unwrap());
    for (x, y) in [(&a.f_lf, &b.f_lf), (&a.f_hf, &b.f_hf), (&a.f_hat, &b.f_hat)] {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let rows = dot_test_stages(&ck, &DotPattern::new(16, 5, 2).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].result.resolved);
}

#[test]
fn qpr_pipeline_runs() {
    let (data, fwd) = dataset(ForwardKind::Qpr, 12);
    let ck = train_pipeline(&data, &fwd, 1.0, &cfg(1), 9).unwrap();
    let r = ck.reconstruct(&data.measurements[0]).unwrap();
    assert!(r.f_hat.data().iter().all(|v| v.is_finite()));
    assert_eq!(ck.manifest().get("kind"), Some("qpr"));
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = PipelineCheckpoint::load(dir.path()).unwrap_err();
    assert!(matches!(err, freqsynth::Error::Missing(_)), "{err}");
}
