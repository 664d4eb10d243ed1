use stea_core::conv::Builder;
use stea_core::degrade::bicubic_upsample;
use stea_core::model::{Model, ModelConfig, ModelKind};
use stea_core::networks::{
    adapter_forward, fusion_features, fusion_forward, labnet_forward, lstea_block_forward, realnet_forward,
    AdapterWeights, BlockSettings, FusionWeights, LabNet, LabNetConfig, LsteaBlockWeights, RealNet, RealNetConfig,
};
use stea_core::rng::{seeded, uniform_tensor};
use stea_core::{count_params, Error, Graph, ParamStore, Tensor, WeightSet};

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    uniform_tensor(&mut seeded(seed), &[3, h, w], 0.5).map(|v| v + 0.5)
}

#[test]
fn labnet_output_shapes_for_odd_sizes() {
    let mut store = ParamStore::new();
    let net = LabNet::new(&mut store, &mut seeded(1), LabNetConfig::desk(4, 3)).unwrap();
    for (h, w) in [(8, 8), (7, 9), (5, 6)] {
        let mut g = Graph::new();
        let y = labnet_forward(&mut g, &store, &net, &image(2, h, w)).unwrap();
        assert_eq!(g.shape(y), &[3, 3 * h, 3 * w]);
    }
    let mut g = Graph::new();
    assert!(matches!(
        labnet_forward(&mut g, &store, &net, &image(2, 3, 8)),
        Err(Error::Size(_))
    ));
}

#[test]
fn zeroed_tail_reduces_labnet_to_bicubic() {
    let mut store = ParamStore::new();
    let net = LabNet::new(&mut store, &mut seeded(3), LabNetConfig::desk(4, 2)).unwrap();
    let tail = net.tail;
    let shape = store.value(tail).shape().to_vec();
    store.set_value(tail, Tensor::zeros(&shape)).unwrap();
    let lr = image(4, 8, 8);
    let mut g = Graph::new();
    let y = labnet_forward(&mut g, &store, &net, &lr).unwrap();
    let want = bicubic_upsample(&lr, 2).unwrap();
    assert!(g.value(y).rel_frobenius_err(&want).unwrap() < 1e-12);
}

#[test]
fn lstea_block_with_zeroed_updates_is_identity() {
    let mut store = ParamStore::new();
    let w = LsteaBlockWeights::new(&mut Builder::new(&mut store, &mut seeded(5)), 4, BlockSettings::default(), 16);
    for id in [w.merge.weights, w.gdfn.project.weights] {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::zeros(&shape)).unwrap();
    }
    let x = uniform_tensor(&mut seeded(6), &[4, 4, 4], 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = lstea_block_forward(&mut g, &store, xv, &w).unwrap();
    assert_eq!(bits(g.value(y)), bits(&x));
}

fn adapter_setup() -> (ParamStore, AdapterWeights, Tensor, Tensor, Tensor) {
    let mut store = ParamStore::new();
    let mut rng = seeded(7);
    let w = AdapterWeights::new(&mut Builder::new(&mut store, &mut rng), 3);
    let den = uniform_tensor(&mut rng, &[3, 5, 5], 1.0);
    let deb = uniform_tensor(&mut rng, &[3, 5, 5], 1.0);
    let deb2 = uniform_tensor(&mut rng, &[3, 5, 5], 1.0);
    (store, w, den, deb, deb2)
}

#[test]
fn adapter_beta_zero_cuts_the_deblur_side() {
    let (store, w, den, deb, deb2) = adapter_setup();
    let run = |foreign: &Tensor, alpha, beta| {
        let mut g = Graph::new();
        let a = g.input(den.clone());
        let b = g.input(foreign.clone());
        let (o, _) = adapter_forward(&mut g, &store, a, b, alpha, beta, &w).unwrap();
        g.value(o).clone()
    };
    assert_eq!(bits(&run(&deb, 0.7, 0.0)), bits(&run(&deb2, 0.7, 0.0)));
    assert_ne!(bits(&run(&deb, 0.7, 1.0)), bits(&run(&deb2, 0.7, 1.0)));
    assert_eq!(run(&deb, 0.0, 0.0).max_abs(), 0.0);
}

#[test]
fn fusion_is_linear_in_the_knobs_before_refinement() {
    let mut store = ParamStore::new();
    let mut rng = seeded(8);
    let w = FusionWeights::new(&mut Builder::new(&mut store, &mut rng), 3, 2);
    let den = uniform_tensor(&mut rng, &[3, 4, 4], 1.0);
    let deb = uniform_tensor(&mut rng, &[3, 4, 4], 1.0);
    let feats = |alpha| {
        let mut g = Graph::new();
        let a = g.input(den.clone());
        let b = g.input(deb.clone());
        let f = fusion_features(&mut g, &store, a, b, alpha, 0.0, &w).unwrap();
        g.value(f).clone()
    };
    assert!(feats(1.4).rel_frobenius_err(&feats(0.7).scale(2.0)).unwrap() < 1e-14);

    let mut g = Graph::new();
    let a = g.input(den.clone());
    let b = g.input(deb.clone());
    let y = fusion_forward(&mut g, &store, a, b, 1.0, 0.0, &w).unwrap();
    assert_eq!(g.shape(y), &[3, 8, 8]);
    let mut g2 = Graph::new();
    let a = g2.input(den);
    let b = g2.input(deb.map(|v| -v));
    let y2 = fusion_forward(&mut g2, &store, a, b, 1.0, 0.0, &w).unwrap();
    assert_eq!(bits(g.value(y)), bits(g2.value(y2)));
}

#[test]
fn realnet_shape_and_finite_backward() {
    let cfg = RealNetConfig {
        nominal_side: 6,
        ..RealNetConfig::desk(4, 2)
    };
    let mut store = ParamStore::new();
    let net = RealNet::new(&mut store, &mut seeded(9), cfg).unwrap();
    let lr = image(10, 6, 7);
    let mut g = Graph::new();
    let y = realnet_forward(&mut g, &store, &net, &lr).unwrap();
    assert_eq!(g.shape(y), &[3, 12, 14]);
    let target = image(11, 12, 14);
    let l = g.l1_loss(y, &target).unwrap();
    let grads = g.backward(l).unwrap();
    let mut seen = 0;
    for (_, t) in grads.params() {
        assert!(t.all_finite());
        seen += 1;
    }
    assert!(seen > 0);
}

#[test]
fn parameter_counts_are_deterministic() {
    for kind in [ModelKind::LabNet, ModelKind::RealNet] {
        let cfg = ModelConfig::desk(kind, 8, 2);
        let (m1, s1) = Model::build(&cfg).unwrap();
        let (m2, s2) = Model::build(&cfg).unwrap();
        assert_eq!(count_params(&s1, &m1), count_params(&s2, &m2));
        assert_eq!(count_params(&s1, &m1), s1.num_scalars());
        let mut ids = 0;
        m1.visit(&mut |_| ids += 1);
        assert_eq!(ids, s1.len());
    }
}

#[test]
fn knobs_need_a_realnet() {
    let (mut m, _) = Model::build(&ModelConfig::desk(ModelKind::LabNet, 4, 2)).unwrap();
    assert!(matches!(m.set_knobs([1.0; 4], [0.0; 4]), Err(Error::Config(_))));
}
