use madnet::controller::{sample_module, AdaptationHistogram};
use madnet::data::{SceneSpec, SequenceGenerator};
use madnet::optim::{Adam, AdamConfig};
use madnet::{AdaptationMode, Controller, ModuleId, Network, NetworkConfig, StepReport, StereoFrame};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> NetworkConfig {
    NetworkConfig {
        levels: 4,
        feature_channels: vec![4, 6, 8, 8],
        decoder_channels: vec![8, 1],
        refinement_channels: vec![6, 1],
        refinement_dilations: vec![1, 2],
        correlation_radius: 2,
        leaky_slope: 0.2,
        lowest_decoder_level: 2,
    }
}

fn frames(n: usize, seed: u64) -> Vec<StereoFrame<f32>> {
    let mut g = SequenceGenerator::new(SceneSpec::domain_b(32, 64), seed).unwrap();
    (0..n).map(|_| g.next_frame().unwrap()).collect()
}

fn run(mode: AdaptationMode, seed: u64, frames: &[StereoFrame<f32>]) -> (Vec<StepReport>, Network<f32>) {
    let mut net = Network::<f32>::build(small(), 1).unwrap();
    let mut opt = Adam::new(&net, AdamConfig::default()).unwrap();
    let mut ctl = Controller::new(&net, mode, seed).unwrap().with_checksums(true);
    let reports = frames.iter().map(|f| ctl.adapt_step(&mut net, &mut opt, f).unwrap()).collect();
    (reports, net)
}

#[test]
fn none_mode_never_touches_parameters() {
    let fs = frames(15, 1);
    let before = Network::<f32>::build(small(), 1).unwrap().checksum();
    let (reports, net) = run(AdaptationMode::None, 0, &fs);
    assert_eq!(net.checksum(), before);
    assert!(reports.iter().all(|r| r.adapt_ms == 0.0 && r.selected_module.is_none()));
}

#[test]
fn mad_seq_cycles_round_robin() {
    let (reports, _) = run(AdaptationMode::MadSeq, 0, &frames(12, 2));
    let picked: Vec<usize> = reports.iter().map(|r| r.selected_module.unwrap().level()).collect();
    assert_eq!(picked, vec![2, 3, 4, 2, 3, 4, 2, 3, 4, 2, 3, 4]);
}

#[test]
fn stochastic_modes_are_reproducible_per_seed() {
    let fs = frames(20, 3);
    for mode in [AdaptationMode::MadFull, AdaptationMode::MadRand] {
        let (a, na) = run(mode, 7, &fs);
        let (b, nb) = run(mode, 7, &fs);
        let sel = |r: &[StepReport]| r.iter().map(|x| x.selected_module).collect::<Vec<_>>();
        assert_eq!(sel(&a), sel(&b));
        assert_eq!(na.checksum(), nb.checksum());
        let losses = |r: &[StepReport]| r.iter().map(|x| x.loss_full_res).collect::<Vec<_>>();
        assert_eq!(losses(&a), losses(&b));
        let (c, _) = run(mode, 8, &fs);
        assert_ne!(sel(&a), sel(&c), "{mode}");
    }
}

#[test]
fn metrics_precede_every_update() {
    let fs = frames(12, 4);
    let initial = Network::<f32>::build(small(), 1).unwrap().checksum();
    for mode in AdaptationMode::ALL {
        let (reports, _) = run(mode, 1, &fs);
        let mut prev = initial;
        for r in &reports {
            assert_eq!(r.checksum_at_metrics, Some(prev), "{mode} frame {}", r.frame_idx);
            if mode != AdaptationMode::None {
                assert_ne!(r.checksum_after, Some(prev), "{mode} frame {}", r.frame_idx);
            }
            prev = r.checksum_after.unwrap();
        }
    }
}

#[test]
fn restricted_modes_touch_only_their_layers() {
    let fs = frames(3, 5);
    let init = Network::<f32>::build(small(), 1).unwrap();
    for (mode, scope) in [
        (AdaptationMode::LastLayer, init.scope_last_layer()),
        (AdaptationMode::Refinement, init.scope_refinement()),
        (AdaptationMode::D2Refinement, init.scope_lowest_decoder_and_refinement()),
    ] {
        let (_, net) = run(mode, 0, &fs);
        for (a, b) in init.layers().zip(net.layers()) {
            assert_eq!(a.weight.value != b.weight.value, scope.contains(a.id), "{mode} {:?}", a.id);
        }
    }
}

#[test]
fn frames_without_ground_truth_still_adapt() {
    let fs: Vec<_> = frames(4, 6)
        .into_iter()
        .map(|f| StereoFrame::new(f.left, f.right).unwrap())
        .collect();
    let (reports, net) = run(AdaptationMode::Full, 0, &fs);
    assert!(reports.iter().all(|r| r.epe_before.is_none() && r.d1_before.is_none()));
    assert_ne!(net.checksum(), Network::<f32>::build(small(), 1).unwrap().checksum());
}

#[test]
fn sampling_frequencies_match_softmax() {
    let modules: Vec<ModuleId> = (2..=6).map(ModuleId).collect();
    let h = AdaptationHistogram::with_bins(modules.clone(), vec![1.0, 0.0, -0.5, 2.0, 0.3]).unwrap();
    let p = h.probabilities();
    let n = 100_000;
    let mut counts = [0usize; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..n {
        let m = sample_module(&h, &mut rng);
        counts[m.level() - 2] += 1;
    }
    for i in 0..5 {
        let freq = counts[i] as f64 / n as f64;
        let se = (p[i] * (1.0 - p[i]) / n as f64).sqrt();
        assert!((freq - p[i]).abs() < 3.0 * se, "module {i}: {freq} vs {}", p[i]);
    }
}
