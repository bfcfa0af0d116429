use latent_clan::diffusion::{
    Checkpoint, Denoiser, Model, NoiseSchedule, ScheduleParams, TrainConfig,
};
use latent_clan::numerics::{DenseNet, Rng};
use latent_clan::prompt_dsl::{Clause, PromptSpec};
use latent_clan::toy_world::{AttributeState, ConditionOrigin, LatentCode, WorldSpec};
use proptest::prelude::*;

fn world() -> WorldSpec {
    WorldSpec::faces(0).unwrap()
}

fn arb_latent() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, 64)
}

fn arb_attrs() -> impl Strategy<Value = (Vec<f64>, u64)> {
    (proptest::collection::vec(-1.0f64..=1.0, 8), any::<u64>())
}

fn state(w: &WorldSpec, values: Vec<f64>, seed: u64) -> AttributeState {
    let mut s = w.sample_attributes(&mut Rng::new(seed));
    s.values = values;
    s
}

fn arb_spec() -> impl Strategy<Value = PromptSpec> {
    proptest::sample::subsequence((0usize..8).collect::<Vec<_>>(), 1..=8).prop_flat_map(|attrs| {
        let n = attrs.len();
        proptest::collection::vec((-100i32..=100).prop_filter("non-zero", |v| *v != 0), n).prop_map(
            move |vals| {
                let clauses = attrs
                    .iter()
                    .zip(vals)
                    .map(|(&attribute, v)| Clause {
                        attribute,
                        value: v as f64 / 100.0,
                    })
                    .collect();
                PromptSpec::new(clauses).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn support_locality(w0 in arb_latent(), k in 0usize..8, dim in 0usize..64, delta in -5.0f64..5.0) {
        let world = world();
        prop_assume!(!world.group(k).contains(&dim));
        let a = LatentCode::from_f64(&w0);
        let mut moved = w0.clone();
        moved[dim] += delta;
        let b = LatentCode::from_f64(&moved);
        prop_assert_eq!(world.latent_readout(&a)[k], world.latent_readout(&b)[k]);
    }

    #[test]
    fn readout_inverts_attribute_map((values, seed) in arb_attrs()) {
        let world = world();
        let s = state(&world, values.clone(), seed);
        let r = world.latent_readout(&world.attributes_to_latent(&s));
        for (a, b) in r.iter().zip(&values) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn image_and_spec_embeddings_agree(vals in proptest::collection::vec(-100i32..=100, 8)) {
        let world = world();
        let values: Vec<f64> = vals.iter().map(|&v| v as f64 / 100.0).collect();
        prop_assume!(values.iter().any(|&v| v != 0.0));
        let clauses = values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(attribute, &value)| Clause { attribute, value }).collect();
        let spec = PromptSpec::new(clauses).unwrap();
        let from_spec = world.condition_encode_spec(&spec).unwrap();
        let from_image = world.embed(&values, ConditionOrigin::Image);
        prop_assert_eq!(&from_spec.values, &from_image.values);
        let norm: f64 = from_spec.values.iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn net_is_finite_on_bounded_inputs(seed in any::<u64>(), width in 1usize..64, depth in 1usize..4, scale in 0.0f64..=10.0) {
        let mut dims = vec![6];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(3);
        let mut rng = Rng::new(seed);
        let net = DenseNet::init(&dims, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| (2.0 * rng.uniform() - 1.0) * scale).collect();
        let y = net.forward(&x).unwrap();
        prop_assert!(y.iter().all(|v| v.is_finite()));
        let (g, gi) = net.backward(&x, &[1.0, -1.0, 0.5]).unwrap();
        prop_assert!(g.max_abs().is_finite() && gi.iter().all(|v| v.is_finite()));
        prop_assert_eq!(net.forward(&x).unwrap(), y);
    }

    #[test]
    fn ddim_is_deterministic_at_zero_eta(x in proptest::collection::vec(-3.0f64..3.0, 8), e in proptest::collection::vec(-3.0f64..3.0, 8), i in 0usize..50) {
        let s = NoiseSchedule::new(ScheduleParams::default()).unwrap();
        let (t, t_prev) = s.step_pairs()[i];
        let a = s.ddim_step(&x, &e, t, t_prev, &mut Rng::new(1)).unwrap();
        let b = s.ddim_step(&x, &e, t, t_prev, &mut Rng::new(2)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn guidance_endpoints_are_exact(seed in any::<u64>(), t in 1usize..=1000, spec in arb_spec()) {
        let world = world();
        let den = Denoiser::init(64, 32, 1000, &[16], &mut Rng::new(seed));
        let cfg = TrainConfig { steps: 0, hidden: vec![16], ..TrainConfig::default() };
        let model = Model::new(world.clone(), Checkpoint::new(&world, ScheduleParams::default(), den.clone(), cfg, vec![])).unwrap();
        let x = Rng::new(seed ^ 1).gaussian(64);
        let c = model.condition(Some(&spec)).unwrap();
        let null = vec![0.0; 32];
        prop_assert_eq!(model.predict_eps(&x, t, &c, 1.0).unwrap(), den.predict_batch(&x, t, &c).unwrap());
        prop_assert_eq!(model.predict_eps(&x, t, &c, 0.0).unwrap(), den.predict_batch(&x, t, &null).unwrap());
    }
}

#[test]
fn worlds_are_deterministic_per_seed() {
    assert_eq!(WorldSpec::faces(5).unwrap(), WorldSpec::faces(5).unwrap());
    assert_eq!(
        WorldSpec::faces(5).unwrap().hash(),
        WorldSpec::faces(5).unwrap().hash()
    );
    assert_ne!(
        WorldSpec::faces(5).unwrap().hash(),
        WorldSpec::faces(6).unwrap().hash()
    );
}
