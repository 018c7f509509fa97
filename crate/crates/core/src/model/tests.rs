use super::*;
use crate::dataset::DatasetRecord;
use crate::dataset::{encode, Quantizer, Vocab};
use crate::geometry::Segment;
use crate::raster::{rasterize, GridSpec};
use rand::Rng as _;

fn tiny(context: ContextKind) -> ModelConfig {
    ModelConfig {
        n_segs: 4,
        embed_dim: 8,
        layers: 2,
        heads: 2,
        dropout: 0.0,
        context,
        grid: GridSpec::new(32, 32, 10.0).unwrap(),
        encoder: EncoderConfig {
            resnet_channels: [2, 3],
            mixer_patch: 8,
            mixer_blocks: 1,
            mixer_token_hidden: 5,
            mixer_channel_hidden: Some(6),
        },
        ..ModelConfig::default()
    }
}

fn randomize_alphas(m: &mut Model, seed: u64) {
    let mut rng = substream(seed, "alpha", 0);
    for a in m.alphas() {
        m.params.get_mut(a).data_mut()[0] = rng.random_range(0.3..1.0);
    }
}

/// Moves every parameter off its initial value so no layer norm sees a
/// constant row.
fn jitter(m: &mut Model, seed: u64) {
    let mut rng = substream(seed, "jitter", 0);
    for id in m.params.ids().collect::<Vec<_>>() {
        for v in m.params.get_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}

fn random_sequence(rng: &mut Rng, segs: usize, stop: bool) -> TokenSequence {
    let v = Vocab::new(256);
    let mut t = Vec::new();
    for _ in 0..segs {
        t.push(MOVE);
        t.push(v.coord(rng.random_range(1..=256)));
        t.push(v.coord(rng.random_range(1..=256)));
        t.push(LINE);
        t.push(v.coord(rng.random_range(1..=256)));
        t.push(v.coord(rng.random_range(1..=256)));
    }
    if stop {
        t.push(STOP);
    }
    TokenSequence::new(t)
}

fn image_for(seq: &TokenSequence, cfg: &ModelConfig) -> BinaryGrid {
    let segs = crate::dataset::decode(seq, &Quantizer::default()).unwrap();
    rasterize(&segs, cfg.grid, cfg.n_raster)
}

#[test]
fn embedding_shapes_and_lookup() {
    let m = Model::new(tiny(ContextKind::None), 1).unwrap();
    assert_eq!(m.embed(&TokenSequence::new(vec![])).unwrap().shape(), &[1, 8]);
    let seq = TokenSequence::new(vec![MOVE, 3, 4, LINE]);
    let emb = m.embed(&seq).unwrap();
    // Row 4 embeds the token at flat position 3: index 1, type 0.
    let p = &m.params;
    let e = &m.embedding;
    for c in 0..8 {
        let expected = p.get(e.value).row(LINE as usize)[c] + p.get(e.index).row(1)[c] + p.get(e.kind).row(0)[c];
        assert_eq!(emb.row(4)[c], expected);
    }
    assert_eq!(emb.row(0), p.get(e.start).row(0));
    let too_long = random_sequence(&mut substream(0, "s", 0), 5, false);
    assert!(m.embed(&too_long).is_err());
}

#[test]
fn embedding_without_positions_is_permutation_invariant() {
    let cfg = ModelConfig { use_position_embeddings: false, ..tiny(ContextKind::None) };
    let m = Model::new(cfg, 2).unwrap();
    let emb = m.embed(&TokenSequence::new(vec![MOVE, 9, 9, LINE, 9, 10])).unwrap();
    assert_eq!(emb.row(2), emb.row(5));
    assert_eq!(emb.row(1), m.embed(&TokenSequence::new(vec![MOVE])).unwrap().row(1));
}

#[test]
fn output_shape_for_full_length_sequence() {
    let cfg = ModelConfig { n_segs: 100, layers: 1, ..tiny(ContextKind::None) };
    let m = Model::new(cfg, 3).unwrap();
    let seq = random_sequence(&mut substream(1, "s", 0), 100, true);
    assert_eq!(seq.len(), 601);
    assert_eq!(m.forward(&seq, None).unwrap().shape(), &[602, 259]);
}

#[test]
fn loss_examples() {
    let uniform = Tensor::zeros(&[3, 259]);
    assert!((loss_bits(&uniform, &[0, 5, 258]).unwrap() - 259f64.log2()).abs() < 1e-12);
    assert_eq!(format!("{:.2}", loss_bits(&uniform, &[7]).unwrap()), "8.02");
    let mut half = Tensor::zeros(&[1, 2]);
    half.data_mut()[1] = 0.0;
    assert!((loss_bits(&half, &[1]).unwrap() - 1.0).abs() < 1e-15);
    let mut sharp = Tensor::zeros(&[1, 4]);
    sharp.data_mut()[2] = 100.0;
    assert!(loss_bits(&sharp, &[2]).unwrap() < 1e-40);
    assert!(loss_bits(&uniform, &[1, 1, 1, 1]).is_err());
}

fn shortcut_logits(m: &Model, seq: &TokenSequence) -> Tensor {
    let mut g = Graph::new(&m.params);
    let mut x = m.embed_graph(&mut g, seq).unwrap();
    if let Stack::Mlp { window, .. } = m.stack {
        let n = g.value(x).rows();
        let idx: Vec<usize> = (0..n).flat_map(|j| window_rows(0, j, window)).collect();
        let w = g.gather_rows(x, idx).unwrap();
        x = g.reshape(w, &[n, window * m.config.embed_dim]).unwrap();
    }
    let y = m.final_norm.forward(&mut g, x).unwrap();
    let y = m.output.forward(&mut g, y).unwrap();
    g.value(y).clone()
}

#[test]
fn rezero_identity_at_init() {
    let seq = random_sequence(&mut substream(2, "s", 0), 3, true);
    for arch in [Arch::Decoder, Arch::Mlp { window: 3 }] {
        let m = Model::new(ModelConfig { arch, ..tiny(ContextKind::None) }, 4).unwrap();
        assert_eq!(m.forward(&seq, None).unwrap(), shortcut_logits(&m, &seq));
    }
    let m = Model::new(tiny(ContextKind::Resnet), 4).unwrap();
    let img = image_for(&seq, &m.config);
    assert_eq!(m.forward(&seq, Some(&img)).unwrap(), shortcut_logits(&m, &seq));
}

#[test]
fn single_position_layer_matches_scalar_formulas() {
    let cfg = ModelConfig { layers: 1, ..tiny(ContextKind::None) };
    let mut m = Model::new(cfg, 5).unwrap();
    randomize_alphas(&mut m, 5);
    let Stack::Decoder(layers) = &m.stack else { unreachable!() };
    let l = layers[0];
    let p = &m.params;
    let x0: Vec<f64> = p.get(m.embedding.start).row(0).to_vec();

    let ln = |x: &[f64], n: LayerNorm| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        let (g, b) = (p.get(n.gain).data(), p.get(n.bias).data());
        x.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
    };
    let dense = |x: &[f64], d: Dense| -> Vec<f64> {
        let (w, b) = (p.get(d.weight), p.get(d.bias).data());
        (0..d.out_dim).map(|o| b[o] + (0..d.in_dim).map(|i| x[i] * w.data()[i * d.out_dim + o]).sum::<f64>()).collect()
    };
    let alpha = |id: ParamId| p.get(id).data()[0];
    // One query over one key: softmax weight 1, attention returns the value.
    let attn = dense(&dense(&ln(&x0, l.self_norm), l.self_attn.value), l.self_attn.output);
    let x1: Vec<f64> = x0.iter().zip(&attn).map(|(a, b)| a + alpha(l.self_alpha) * b).collect();
    let hidden: Vec<f64> = dense(&ln(&x1, l.ff_norm), l.ff1).into_iter().map(|v| v.max(0.0)).collect();
    let ff = dense(&hidden, l.ff2);
    let y: Vec<f64> = x1.iter().zip(&ff).map(|(a, b)| a + alpha(l.ff_alpha) * b).collect();
    let expected = dense(&ln(&y, m.final_norm), m.output);

    let got = m.forward(&TokenSequence::new(vec![]), None).unwrap();
    for (a, b) in got.row(0).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn logits_are_causal() {
    let mut rng = substream(6, "causal", 0);
    for arch in [Arch::Decoder, Arch::Mlp { window: 4 }] {
        let mut m = Model::new(ModelConfig { arch, ..tiny(ContextKind::None) }, 6).unwrap();
        randomize_alphas(&mut m, 6);
        for _ in 0..10 {
            let seq = random_sequence(&mut rng, 4, true);
            let base = m.forward(&seq, None).unwrap();
            let pos = rng.random_range(0..seq.len());
            if !Vocab::new(256).is_coord(seq.tokens[pos]) {
                continue;
            }
            let mut edited = seq.clone();
            edited.tokens[pos] = Vocab::new(256).coord(rng.random_range(1..=256));
            let out = m.forward(&edited, None).unwrap();
            for r in 0..=pos {
                assert_eq!(out.row(r), base.row(r));
            }
        }
    }
}

fn assert_incremental_matches(m: &Model, seq: &TokenSequence, img: Option<&BinaryGrid>) {
    let full = m.forward(seq, img).unwrap();
    let input = m.model_input(seq).unwrap();
    let mut d = m.decoder(img).unwrap();
    for (j, &t) in input.tokens.iter().enumerate() {
        for (a, b) in d.logits().iter().zip(full.row(j)) {
            assert!((a - b).abs() < 1e-10, "row {j}: {a} vs {b}");
        }
        assert_eq!(d.next_position(t), input.positions[j]);
        d.push(t).unwrap();
    }
    for (a, b) in d.logits().iter().zip(full.row(input.tokens.len())) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn incremental_decoding_matches_full_forward() {
    let seq = random_sequence(&mut substream(7, "s", 0), 3, true);
    let configs = [
        tiny(ContextKind::None),
        ModelConfig { use_opcode_tokens: false, ..tiny(ContextKind::None) },
        ModelConfig { arch: Arch::Mlp { window: 3 }, ..tiny(ContextKind::None) },
        tiny(ContextKind::Resnet),
        tiny(ContextKind::Mixer),
    ];
    for cfg in configs {
        let mut m = Model::new(cfg, 7).unwrap();
        randomize_alphas(&mut m, 7);
        let img = m.config.has_context().then(|| image_for(&seq, &m.config));
        assert_incremental_matches(&m, &seq, img.as_ref());
    }
}

#[test]
fn opcode_ablation_positions() {
    let seq = random_sequence(&mut substream(8, "s", 0), 2, true);
    for (r, (&t, &pos)) in seq.without_opcodes().tokens.iter().zip(&seq.reduced_positions()).enumerate() {
        assert_eq!(reduced_flat_position(r, t), pos);
    }
}

#[test]
fn context_mismatches_rejected() {
    let seq = TokenSequence::new(vec![MOVE]);
    let plain = Model::new(tiny(ContextKind::None), 0).unwrap();
    let img = BinaryGrid::new(plain.config.grid);
    assert!(plain.forward(&seq, Some(&img)).is_err());
    let resnet = Model::new(tiny(ContextKind::Resnet), 0).unwrap();
    assert!(resnet.forward(&seq, None).is_err());
    assert!(resnet.forward(&seq, Some(&BinaryGrid::new(GridSpec::new(16, 16, 10.0).unwrap()))).is_err());
}

fn context_rows(m: &Model, img: &BinaryGrid) -> Tensor {
    let mut g = Graph::new(&m.params);
    let c = m.encode_image(&mut g, img).unwrap();
    g.value(c).clone()
}

#[test]
fn encoder_output_lengths_at_full_resolution() {
    for kind in [ContextKind::Resnet, ContextKind::Mixer] {
        let cfg = ModelConfig {
            grid: GridSpec::CONDITIONING,
            encoder: EncoderConfig { mixer_token_hidden: 16, ..EncoderConfig::default() },
            ..tiny(kind)
        };
        let m = Model::new(cfg, 9).unwrap();
        let img = rasterize(&[Segment::from_coords(-3.0, 1.0, 4.0, 2.0)], GridSpec::CONDITIONING, 25);
        assert_eq!(context_rows(&m, &img).shape(), &[256, 8]);
    }
}

#[test]
fn zeroed_encoder_output_is_coordinate_embedding() {
    for kind in [ContextKind::Resnet, ContextKind::Mixer] {
        let mut m = Model::new(tiny(kind), 10).unwrap();
        let zero: Vec<ParamId> = match &m.encoder.as_ref().unwrap().body {
            EncoderBody::ResNet(_) => vec![m.params.id("ctx.proj.w").unwrap(), m.params.id("ctx.proj.b").unwrap()],
            EncoderBody::Mixer(x) => vec![x.norm.gain, x.norm.bias],
        };
        for id in zero {
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let img = BinaryGrid::new(m.config.grid);
        let rows = context_rows(&m, &img);
        let coord = m.params.get(m.encoder.as_ref().unwrap().coord);
        let grid = coordinate_grid(4, 4);
        for r in 0..16 {
            for c in 0..8 {
                let e = grid.row(r)[0] * coord.row(0)[c] + grid.row(r)[1] * coord.row(1)[c];
                assert!((rows.row(r)[c] - e).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn translated_image_changes_context() {
    for kind in [ContextKind::Resnet, ContextKind::Mixer] {
        let m = Model::new(tiny(kind), 11).unwrap();
        let seg = Segment::from_coords(-3.0, 1.0, 2.0, 1.0);
        let a = rasterize(&[seg], m.config.grid, 1);
        let b = rasterize(&[seg.translate(crate::Point::new(2.5, -2.5))], m.config.grid, 1);
        assert_ne!(a, b);
        assert_ne!(context_rows(&m, &a), context_rows(&m, &b));
    }
}

#[test]
fn zero_token_mixing_reduces_to_channel_mixing() {
    let m = Model::new(tiny(ContextKind::Mixer), 12).unwrap();
    let EncoderBody::Mixer(mixer) = &m.encoder.as_ref().unwrap().body else { unreachable!() };
    let block = mixer.blocks[0];
    let mut p = m.params.clone();
    for d in [block.token1, block.token2] {
        p.get_mut(d.weight).data_mut().fill(0.0);
        p.get_mut(d.bias).data_mut().fill(0.0);
    }
    let x = crate::nn::normal_tensor(&[16, 8], 1.0, &mut substream(12, "x", 0));
    let mut g = Graph::new(&p);
    let xv = g.input(x);
    let full = block.forward(&mut g, xv).unwrap();
    let h = block.channel_norm.forward(&mut g, xv).unwrap();
    let h = block.channel1.forward(&mut g, h).unwrap();
    let h = g.relu(h);
    let h = block.channel2.forward(&mut g, h).unwrap();
    let expected = g.add(xv, h).unwrap();
    assert_eq!(g.value(full), g.value(expected));
}

/// Central-difference check of `loss_graph` over every parameter.
fn gradient_error(m: &mut Model, batch_seqs: &[TokenSequence]) -> f64 {
    let imgs: Vec<Option<BinaryGrid>> =
        batch_seqs.iter().map(|s| m.config.has_context().then(|| image_for(s, &m.config))).collect();
    let loss_of = |m: &Model| -> (f64, Option<crate::nn::Gradients>) {
        let batch: Vec<Example> =
            batch_seqs.iter().zip(&imgs).map(|(tokens, i)| Example { tokens, image: i.as_ref() }).collect();
        let mut g = Graph::new(&m.params);
        let l = m.loss_graph(&mut g, &batch).unwrap();
        (g.value(l).data()[0], None)
    };
    let grads = {
        let batch: Vec<Example> =
            batch_seqs.iter().zip(&imgs).map(|(tokens, i)| Example { tokens, image: i.as_ref() }).collect();
        let mut g = Graph::new(&m.params);
        let l = m.loss_graph(&mut g, &batch).unwrap();
        g.backward(l).unwrap()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in m.params.ids().collect::<Vec<_>>() {
        for i in 0..m.params.get(id).len() {
            let orig = m.params.get(id).data()[i];
            m.params.get_mut(id).data_mut()[i] = orig + h;
            let up = loss_of(m).0;
            m.params.get_mut(id).data_mut()[i] = orig - h;
            let down = loss_of(m).0;
            m.params.get_mut(id).data_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grads.get(id).data()[i];
            worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = substream(13, "grad", 0);
    let seqs = [random_sequence(&mut rng, 1, true), random_sequence(&mut rng, 1, false)];
    for cfg in [
        ModelConfig { n_q: 256, ..tiny(ContextKind::None) },
        ModelConfig { arch: Arch::Mlp { window: 3 }, ..tiny(ContextKind::None) },
        ModelConfig { use_opcode_tokens: false, ..tiny(ContextKind::None) },
        tiny(ContextKind::Mixer),
        tiny(ContextKind::Resnet),
    ] {
        let mut m = Model::new(cfg, 13).unwrap();
        randomize_alphas(&mut m, 13);
        jitter(&mut m, 13);
        let err = gradient_error(&mut m, &seqs);
        assert!(err < 1e-4, "{:?}: {err}", m.config.arch);
    }
}

fn toy_records(n: usize) -> Vec<DatasetRecord> {
    let q = Quantizer::default();
    let mut rng = substream(14, "records", 0);
    (0..n)
        .map(|i| {
            let segs: Vec<Segment> = (0..2)
                .map(|_| {
                    let x = rng.random_range(-5.0..5.0);
                    let y = rng.random_range(-5.0..5.0);
                    Segment::from_coords(x, y, x + 1.5, y)
                })
                .collect();
            let tokens = encode(&segs, &q);
            DatasetRecord::from_tokens("b", &format!("p{i}"), crate::Point::ORIGIN, tokens, &q).unwrap()
        })
        .collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let mut m = Model::new(tiny(ContextKind::None), 15).unwrap();
    let before = m.params.clone();
    let cfg = TrainConfig { steps: 3, batch_size: 2, adam: crate::nn::AdamConfig { lr: 0.0, ..Default::default() }, ..Default::default() };
    train(&mut m, &toy_records(4), &Quantizer::default(), &cfg, |_| Ok(())).unwrap();
    for id in before.ids() {
        assert_eq!(before.get(id), m.params.get(id));
    }
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let records = toy_records(4);
    let cfg = TrainConfig {
        steps: 60,
        batch_size: 4,
        log_every: 10,
        augment: false,
        adam: crate::nn::AdamConfig { lr: 3e-3, ..Default::default() },
        ..Default::default()
    };
    let run = || {
        let mut m = Model::new(tiny(ContextKind::None), 16).unwrap();
        let mut ckpts = 0;
        let log = train(&mut m, &records, &Quantizer::default(), &TrainConfig { checkpoint_every: 30, ..cfg.clone() }, |e| {
            if let TrainEvent::Checkpoint { .. } = e {
                ckpts += 1;
            }
            Ok(())
        })
        .unwrap();
        (log, ckpts, m)
    };
    let (a, ckpts, m) = run();
    let (b, _, _) = run();
    assert_eq!(a, b);
    assert_eq!(ckpts, 2);
    assert_eq!(a.len(), 6);
    assert!(a.last().unwrap().nll_bits < a[0].nll_bits);

    let ckpt = m.checkpoint();
    let back = Model::from_checkpoint(&Checkpoint::read(ckpt.to_bytes().as_slice()).unwrap()).unwrap();
    assert_eq!(back.checkpoint(), ckpt);
}

#[test]
fn divergence_is_reported() {
    let mut m = Model::new(tiny(ContextKind::None), 17).unwrap();
    let id = m.params.id("output.b").unwrap();
    m.params.get_mut(id).data_mut()[0] = f64::NAN;
    let cfg = TrainConfig { steps: 2, batch_size: 1, ..Default::default() };
    let err = train(&mut m, &toy_records(2), &Quantizer::default(), &cfg, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 1, .. }));
}
