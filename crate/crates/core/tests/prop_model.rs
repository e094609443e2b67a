use std::collections::HashSet;

use proptest::prelude::*;
use unifilter::classifier::{Classifier, ModelConfig, SequenceInput};
use unifilter::encoder::{adaptive_avg_pool_2d, EncoderConfig, FrozenEncoder, PatchGrid};
use unifilter::io::{CaptionSample, ImagePayload, InterleavedDoc, Item, Record};
use unifilter::nn::Tensor2D;
use unifilter::packing::Vocab;
use unifilter::rng;
use unifilter::synthgen::{
    always_pass, build_dataset, mock_image, DatasetConfig, LevelCounts, MockGenerator, MockImageSource, QualityLabel,
};

const WORDS: [&str; 10] = ["a", "red", "cat", "sits", "on", "the", "mat", "blue", "dog", "runs"];

fn vocab() -> Vocab {
    Vocab::build([WORDS.join(" ").as_str()], 1)
}

fn tiny_model(seed: u64) -> Classifier<f64> {
    let v = vocab();
    let cfg = ModelConfig {
        d: 8,
        n_layers: 2,
        n_heads: 2,
        mlp_ratio: 2,
        vocab_size: v.len(),
        max_seq_len: 64,
        encoder: EncoderConfig {
            d_v: 6,
            t: 2,
            seed: 3,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    };
    Classifier::new(cfg, v, seed).unwrap()
}

fn text_of(words: &[usize]) -> String {
    words.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ")
}

fn words() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..WORDS.len(), 1..12)
}

fn record(seed: u64, doc: bool, first: &[usize], second: &[usize]) -> Record {
    let mut r = rng::stream(seed, "prop-record", 0);
    let image = mock_image(&[0, 1, 2, 3], 8, &mut r);
    if doc {
        InterleavedDoc {
            id: format!("d{seed}"),
            items: vec![Item::text(text_of(first)), Item::image(image), Item::text(text_of(second))],
        }
        .into()
    } else {
        CaptionSample {
            id: format!("c{seed}"),
            image,
            text: text_of(first),
        }
        .into()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pooling_conserves_the_mean_when_bins_divide(
        seed in any::<u64>(),
        t in 1usize..5,
        kh in 1usize..4,
        kw in 1usize..4,
    ) {
        let (h, w) = (t * kh, t * kw);
        let mut r = rng::stream(seed, "prop-pool", 0);
        let grid = PatchGrid::new(h, w, Tensor2D::<f64>::randn(h * w, 3, 1.0, &mut r)).unwrap();
        let pooled = adaptive_avg_pool_2d(&grid, t).unwrap();
        prop_assert_eq!(pooled.vecs.rows(), t * t);
        for (a, b) in pooled.mean().iter().zip(grid.mean()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn every_input_cell_reaches_some_output(
        t in 1usize..6,
        extra_h in 0usize..7,
        extra_w in 0usize..7,
        cell in any::<(prop::sample::Index, prop::sample::Index)>(),
    ) {
        let (h, w) = (t + extra_h, t + extra_w);
        let (i, j) = (cell.0.index(h), cell.1.index(w));
        let mut data = vec![0.0; h * w];
        data[i * w + j] = 1.0;
        let grid = PatchGrid::new(h, w, Tensor2D::from_vec(h * w, 1, data).unwrap()).unwrap();
        let pooled = adaptive_avg_pool_2d(&grid, t).unwrap();
        prop_assert!(pooled.vecs.data().iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn image_token_count_ignores_resolution(
        t in 1usize..5,
        patches_h in 0usize..5,
        patches_w in 0usize..5,
        seed in any::<u64>(),
    ) {
        let cfg = EncoderConfig { t, d_v: 5, ..EncoderConfig::default() };
        let enc = FrozenEncoder::<f64>::new(&cfg).unwrap();
        let (h, w) = ((t + patches_h) * cfg.patch_size, (t + patches_w) * cfg.patch_size);
        let mut r = rng::stream(seed, "prop-res", 0);
        let data: Vec<f64> = (0..3 * h * w).map(|_| rand::Rng::random::<f64>(&mut r)).collect();
        let pooled = enc.pooled(&ImagePayload::pixels(3, h, w, data)).unwrap();
        prop_assert_eq!(pooled.vecs.shape(), (t * t, cfg.d_v));
    }

    #[test]
    fn editing_later_text_keeps_earlier_states(
        seed in 0u64..1000,
        doc in any::<bool>(),
        first in words(),
        second in words(),
        cut in any::<prop::sample::Index>(),
        replacement in words(),
    ) {
        let m = tiny_model(seed);
        let base = record(seed, doc, &first, &second);
        // replace the tail of the last text item
        let (edited, kept) = if doc {
            let mut tail = second.clone();
            let k = cut.index(tail.len());
            tail.truncate(k);
            tail.extend(&replacement);
            (record(seed, true, &first, &tail), first.len() + 4 + k)
        } else {
            let mut tail = first.clone();
            let k = cut.index(tail.len());
            tail.truncate(k);
            tail.extend(&replacement);
            (record(seed, false, &tail, &second), 4 + k)
        };
        let a = m.assemble(&m.prepare(&base).unwrap()).unwrap();
        let b = m.assemble(&m.prepare(&edited).unwrap()).unwrap();
        let ha = m.hidden_states(&a).unwrap();
        let hb = m.hidden_states(&b).unwrap();
        for i in 0..kept.min(a.len()).min(b.len()) {
            prop_assert_eq!(a.embeddings.row(i), b.embeddings.row(i));
            prop_assert_eq!(ha.row(i), hb.row(i), "position {}", i);
        }
    }

    #[test]
    fn scores_do_not_depend_on_batch_company(
        seed in 0u64..1000,
        texts in prop::collection::vec((any::<bool>(), words(), words()), 1..10),
        order in any::<prop::sample::Index>(),
    ) {
        let m = tiny_model(seed);
        let records: Vec<Record> = texts
            .iter()
            .enumerate()
            .map(|(i, (doc, a, b))| record(seed * 100 + i as u64, *doc, a, b))
            .collect();
        let inputs: Vec<SequenceInput<f64>> = records.iter().map(|r| m.prepare(r).unwrap()).collect();
        let alone: Vec<f64> = inputs.iter().map(|i| m.score_batch(&[i]).unwrap()[0]).collect();

        let mut refs: Vec<&SequenceInput<f64>> = inputs.iter().collect();
        let shift = order.index(refs.len());
        refs.rotate_left(shift);
        let batched = m.score_batch(&refs).unwrap();
        for (k, s) in batched.iter().enumerate() {
            prop_assert_eq!(s.to_bits(), alone[(k + shift) % alone.len()].to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_dataset_is_balanced_and_split_cleanly(
        caption in 1usize..4,
        interleaved in 1usize..4,
        val_fraction in 0.05f64..0.6,
        seed in any::<u64>(),
    ) {
        let src = MockImageSource { side: 8, ..MockImageSource::default() };
        let cfg = DatasetConfig {
            per_level: LevelCounts { caption, interleaved },
            val_fraction,
            seed,
            min_doc_words: 20,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(
            &MockGenerator::default(),
            &src.caption_images(4 * caption, seed),
            &src.document_images(4 * interleaved, seed),
            &[],
            &cfg,
            &always_pass,
        )
        .unwrap();

        let train: HashSet<&str> = ds.train.iter().map(|s| s.id()).collect();
        let val: HashSet<&str> = ds.val.iter().map(|s| s.id()).collect();
        prop_assert!(train.is_disjoint(&val));
        prop_assert_eq!(train.len() + val.len(), 4 * (caption + interleaved));
        prop_assert!(!train.is_empty());

        for level in QualityLabel::ALL {
            let of = |doc: bool| {
                ds.all()
                    .filter(|s| s.label == level && matches!(s.record, Record::Interleaved(_)) == doc)
                    .count()
            };
            prop_assert_eq!(of(false), caption);
            prop_assert_eq!(of(true), interleaved);
        }

        for s in ds.all() {
            let v: serde_json::Value = serde_json::to_value(s).unwrap();
            prop_assert_eq!(v["label"].as_u64(), Some(s.label.value() as u64));
            prop_assert_eq!(QualityLabel::from_name(v["level_name"].as_str().unwrap()), Some(s.label));
            prop_assert_eq!(&serde_json::from_value::<unifilter::io::LabeledSample>(v).unwrap(), s);
        }
    }
}
