use super::*;
use crate::device::ActionMask;
use crate::ir::IrGraph;
use crate::nn::{Adam, Gradients};

fn tiny_device() -> DeviceConfig {
    DeviceConfig::new(2, 2, 2)
}

fn tiny_config(use_gga: bool) -> ModelConfig {
    ModelConfig { gnn_hidden: 8, embed_width: 4, attention_heads: 2, mlp_hidden: 8, use_gga }
}

fn graph(n: usize, edges: &[(usize, usize)]) -> DataflowGraph {
    DataflowGraph::new(IrGraph::from_edges("t", n, edges)).unwrap()
}

fn obs(occ: Vec<f64>, cur: usize, n: usize) -> Observation {
    Observation { ts_occupancy: occ, current_node: Some(cur), num_nodes: n }
}

#[test]
fn single_node_attention_is_one() {
    let model = ActorCritic::<f64>::new(tiny_config(true), &tiny_device(), 3).unwrap();
    let g = GraphTensors::new(&graph(1, &[]));
    let (emb, attn) = model.gga_forward(&g, 0).unwrap();
    assert_eq!(emb.len(), 4);
    assert_eq!(attn.shape(), &[1, 1]);
    assert!((attn[[0, 0]] - 1.0).abs() < 1e-12);
}

#[test]
fn attention_rows_are_stochastic() {
    let model = ActorCritic::<f32>::new(ModelConfig::default(), &DeviceConfig::default(), 5).unwrap();
    let g = GraphTensors::new(&DataflowGraph::new(crate::ir::fixtures::fft_like()).unwrap());
    let (_, attn) = model.gga_forward(&g, 4).unwrap();
    for row in attn.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn relabelling_nodes_keeps_the_embedding() {
    let model = ActorCritic::<f64>::new(tiny_config(true), &tiny_device(), 9).unwrap();
    let a = graph(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
    // Same diamond, ids permuted by p = [2, 0, 3, 1].
    let p = [2, 0, 3, 1];
    let b = graph(4, &[(p[0], p[1]), (p[0], p[2]), (p[1], p[3]), (p[2], p[3])]);
    let (ea, _) = model.gga_forward(&GraphTensors::new(&a), 1).unwrap();
    let (eb, _) = model.gga_forward(&GraphTensors::new(&b), p[1]).unwrap();
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn duplicated_component_keeps_the_embedding() {
    let model = ActorCritic::<f64>::new(tiny_config(true), &tiny_device(), 11).unwrap();
    let one = graph(3, &[(0, 1), (1, 2)]);
    let two = graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5)]);
    let (e1, _) = model.gga_forward(&GraphTensors::new(&one), 1).unwrap();
    let (e2, _) = model.gga_forward(&GraphTensors::new(&two), 4).unwrap();
    for (x, y) in e1.iter().zip(&e2) {
        assert!((x - y).abs() < 1e-12, "{e1:?} vs {e2:?}");
    }
}

#[test]
fn masked_logits_and_values() {
    let model = ActorCritic::<f64>::new(tiny_config(true), &tiny_device(), 1).unwrap();
    let g = GraphTensors::new(&graph(2, &[(0, 1)]));
    let o = obs(vec![0.5, 0.0, 0.0, 0.0], 1, 2);
    let mask = ActionMask::from_bits(vec![false, true, true, false], 2);
    let out = model.evaluate(&g, &o, &mask);
    assert!(out.logits[0].is_infinite() && out.logits[3].is_infinite());
    assert!(out.logits[1].is_finite());
    assert!(out.value.is_finite() && out.value.abs() < 1e3);
    assert_eq!(out.value, model.evaluate(&g, &o, &mask).value);
    let d = MaskedCategorical::new(&out.logits, &mask).unwrap();
    assert_eq!(d.probs()[0], 0.0);
    assert_eq!(d.probs()[3], 0.0);
}

#[test]
fn evaluate_actions_checks_the_mask() {
    let model = ActorCritic::<f64>::new(tiny_config(false), &tiny_device(), 1).unwrap();
    let g = GraphTensors::new(&graph(2, &[(0, 1)]));
    let o = obs(vec![0.0; 4], 0, 2);
    let step = StepRef { graph: &g, observation: &o };
    let mask = ActionMask::from_bits(vec![true, false, true, true], 2);
    assert!(matches!(
        model.evaluate_actions(&[step], &[&mask], &[1]),
        Err(ModelError::MaskedAction { index: 0, action: 1 })
    ));
    let full = ActionMask::from_bits(vec![true; 4], 2);
    let ev = model.evaluate_actions(&[step], &[&full], &[2]).unwrap();
    let out = model.evaluate(&g, &o, &full);
    let lse = out.logits.iter().map(|z| z.exp()).sum::<f64>().ln();
    let brute: f64 = out.logits.iter().map(|z| -(z - lse).exp() * (z - lse)).sum();
    assert!((ev.entropies[0] - brute).abs() < 1e-12);
    assert!((ev.log_probs[0] - (out.logits[2] - lse)).abs() < 1e-12);
}

/// Surrogate losses whose logit/value gradients are seeded analytically,
/// checked against central differences.
fn gradient_check(use_gga: bool) {
    let mut model = ActorCritic::<f64>::new(tiny_config(use_gga), &tiny_device(), 21).unwrap();
    let g = GraphTensors::new(&graph(2, &[(0, 1)]));
    let observations = [obs(vec![0.0; 4], 0, 2), obs(vec![0.0, 0.5, 0.0, 0.0], 1, 2)];
    let masks = [ActionMask::from_bits(vec![true; 4], 2), ActionMask::from_bits(vec![true, false, true, true], 2)];
    let actions = [3usize, 2];
    let adv = [0.7, -1.3];
    let ret = [-3.0, -7.0];
    let ent = 0.05;
    let steps: Vec<_> = observations.iter().map(|o| StepRef { graph: &g, observation: o }).collect();
    let mask_refs: Vec<_> = masks.iter().collect();
    let b = steps.len() as f64;

    let actor_loss = |m: &ActorCritic<f64>| {
        let ev = m.evaluate_actions(&steps, &mask_refs, &actions).unwrap();
        -(0..2).map(|i| adv[i] * ev.log_probs[i] + ent * ev.entropies[i]).sum::<f64>() / b
    };
    let critic_loss = |m: &ActorCritic<f64>| {
        let ev = m.evaluate_actions(&steps, &mask_refs, &actions).unwrap();
        (0..2).map(|i| (ev.values[i] - ret[i]).powi(2)).sum::<f64>() / b
    };

    let actor_grads = {
        let mut tape = Tape::new(&model.actor);
        let z = model.actor_logits(&mut tape, &steps);
        let logits = tape.value(z).clone();
        let mut seed = Array2::zeros(logits.raw_dim());
        for i in 0..2 {
            let d = MaskedCategorical::new(logits.row(i).as_slice().unwrap(), &masks[i]).unwrap();
            let gz = d.grad_logits(Some(actions[i]), adv[i], ent);
            for (j, x) in gz.into_iter().enumerate() {
                seed[[i, j]] = -x / b;
            }
        }
        tape.backward(&[(z, seed)])
    };
    let critic_grads = {
        let mut tape = Tape::new(&model.critic);
        let v = model.critic_values(&mut tape, &steps);
        let vals = tape.value(v).clone();
        let seed = Array2::from_shape_fn((2, 1), |(i, _)| 2.0 * (vals[[i, 0]] - ret[i]) / b);
        tape.backward(&[(v, seed)])
    };

    let check = |model: &mut ActorCritic<f64>, actor: bool, grads: &Gradients<f64>| {
        let ids: Vec<_> = if actor { model.actor.ids().collect() } else { model.critic.ids().collect() };
        let mut checked = 0;
        for id in ids {
            let shape = if actor { model.actor.get(id).raw_dim() } else { model.critic.get(id).raw_dim() };
            for idx in ndarray::indices(shape) {
                let h = 1e-5;
                let set = |m: &mut ActorCritic<f64>, delta: f64| {
                    let p = if actor { m.actor.get_mut(id) } else { m.critic.get_mut(id) };
                    p[idx] += delta;
                };
                set(model, h);
                let up = if actor { actor_loss(model) } else { critic_loss(model) };
                set(model, -2.0 * h);
                let down = if actor { actor_loss(model) } else { critic_loss(model) };
                set(model, h);
                let num = (up - down) / (2.0 * h);
                let ana = grads.get(id)[idx];
                let scale = num.abs().max(ana.abs()).max(1e-6);
                assert!((num - ana).abs() / scale < 1e-4 || (num - ana).abs() < 1e-9, "{num} vs {ana}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    };
    check(&mut model, true, &actor_grads);
    check(&mut model, false, &critic_grads);
}

#[test]
fn gradients_match_finite_differences() {
    gradient_check(true);
}

#[test]
fn baseline_mode_gradients_match_finite_differences() {
    gradient_check(false);
}

#[test]
fn masked_logit_gets_no_gradient() {
    let d = MaskedCategorical::new(&[0.1f64, 0.4, -0.2], &ActionMask::from_bits(vec![true, false, true], 1)).unwrap();
    assert_eq!(d.grad_logits(Some(2), 1.7, 0.01)[1], 0.0);
}

#[test]
fn critic_fits_a_constant_return() {
    let mut model = ActorCritic::<f64>::new(tiny_config(true), &tiny_device(), 2).unwrap();
    let g = GraphTensors::new(&graph(2, &[(0, 1)]));
    let observations = [obs(vec![0.0; 4], 0, 2), obs(vec![0.5, 0.0, 0.0, 0.0], 1, 2)];
    let steps: Vec<_> = observations.iter().map(|o| StepRef { graph: &g, observation: o }).collect();
    let mut opt = Adam::new(&model.critic, 1e-2);
    for _ in 0..500 {
        let grads = {
            let mut tape = Tape::new(&model.critic);
            let v = model.critic_values(&mut tape, &steps);
            let seed = tape.value(v).mapv(|x| x + 7.0);
            tape.backward(&[(v, seed)])
        };
        opt.step(&mut model.critic, &grads);
    }
    for o in &observations {
        let v = model.critic_forward(&g, o);
        assert!((v + 7.0).abs() < 0.5, "value {v}");
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let device = tiny_device();
    let model = ActorCritic::<f32>::new(tiny_config(true), &device, 4).unwrap();
    let ck = Checkpoint { model, step: 17, rng: ChaCha8Rng::seed_from_u64(8) };
    let back = Checkpoint::<f32>::from_json(&ck.to_json()).unwrap();
    assert_eq!(back.step, 17);
    for id in ck.model.actor.ids() {
        assert_eq!(ck.model.actor.get(id), back.model.actor.get(id));
    }
    assert!(back.ensure_compatible(&device, Some(&tiny_config(true))).is_ok());
    let wider = ModelConfig { embed_width: 8, ..tiny_config(true) };
    assert!(back.ensure_compatible(&device, Some(&wider)).unwrap_err().to_string().contains("embed_width"));
    let big = DeviceConfig::new(64, 2, 2);
    assert!(back.ensure_compatible(&big, None).unwrap_err().to_string().contains("action_dim"));
}
