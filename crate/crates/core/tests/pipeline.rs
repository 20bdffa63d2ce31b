//! End-to-end runs through files on disk: corpus, manifest, training,
//! checkpoint files and evaluation.

use std::fs;

use dnt_core::dataset::{generate_corpus, CorpusSpec, Manifest, NoiseKind, NoiseSource, SpeechSource};
use dnt_core::model::{FdBlstmConfig, FdConvConfig, ModelConfig, TasNetConfig};
use dnt_core::objective::LossSpec;
use dnt_core::trainer::{
    evaluate, load_checkpoint, save_checkpoint, train, Processor, TrainConfig, Trainer,
};
use dnt_core::Error;

fn corpus(dir: &std::path::Path, count: usize, seed: u64) -> Manifest {
    let spec = CorpusSpec {
        speech: SpeechSource::Synthetic { len: 1200 },
        noise: NoiseSource::Synthetic(NoiseKind::Babble),
        count,
        snr_range: (0.0, 5.0),
        base_seed: seed,
    };
    generate_corpus(&spec, dir).unwrap()
}

fn small(model: ModelConfig, loss: LossSpec, epochs: usize) -> (ModelConfig, TrainConfig) {
    let mut cfg = TrainConfig::new(epochs, loss);
    cfg.segment_len = 800;
    cfg.batch_size = 2;
    cfg.seed = 11;
    (model, cfg)
}

fn families() -> Vec<(ModelConfig, TrainConfig)> {
    let mut blstm = FdBlstmConfig::toy(1);
    blstm.win_len = 64;
    blstm.hop = 16;
    let mut conv = FdConvConfig::toy(2);
    conv.win_len = 64;
    conv.hop = 16;
    vec![
        small(ModelConfig::Tasnet(TasNetConfig::toy(2)), LossSpec::tdl(true), 3),
        small(ModelConfig::FdBlstm(blstm), LossSpec::fdl(false), 3),
        small(ModelConfig::FdConv(conv), LossSpec::tdl(true), 3),
    ]
}

#[test]
fn resume_from_file_matches_uninterrupted_for_every_family() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(&dir.path().join("c"), 3, 4);
    let items = Manifest::read(dir.path().join("c/manifest.jsonl")).unwrap().load_all().unwrap();
    assert_eq!(items.len(), manifest.entries.len());
    for (i, (model, cfg)) in families().into_iter().enumerate() {
        let full = train(&model, &items, &items[..1], &cfg).unwrap();

        let mut first = Trainer::new(model.clone(), cfg.clone()).unwrap();
        first.run_epoch(&items, &items[..1]).unwrap();
        let path = dir.path().join(format!("k{i}.ckpt"));
        save_checkpoint(first.checkpoint(), &path).unwrap();
        drop(first);

        let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path).unwrap()).unwrap();
        let mut last = None;
        while !resumed.is_done() {
            last = Some(resumed.run_epoch(&items, &items[..1]).unwrap());
        }
        let last = last.unwrap();
        assert_eq!(resumed.checkpoint(), &full.last, "family {i}");
        assert!((last.train_loss - full.log[2].train_loss).abs() <= 1e-12);
        let best = full.log.iter().map(|l| l.valid_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(full.best.best_valid_loss, Some(best));
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cfg) = families().remove(1);
    let ckpt = Trainer::new(model, cfg).unwrap().checkpoint().clone();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    let bytes = fs::read(&path).unwrap();
    save_checkpoint(&load_checkpoint(&path).unwrap(), &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bytes);

    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointTruncated(_))));
    assert!(load_checkpoint(dir.path().join("missing.ckpt")).unwrap_err().is_io());
}

#[test]
fn evaluation_over_manifest_skips_broken_items() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 4, 9);
    let identity = evaluate(&Processor::Identity, &manifest);
    assert_eq!((identity.rows.len(), identity.skipped), (4, 0));
    assert!(identity.rows.iter().all(|r| r.delta == 0.0));
    let mean = identity.mean.as_ref().unwrap();
    let snr_in = identity.rows.iter().map(|r| r.snr_in).sum::<f64>() / 4.0;
    assert!((mean.snr_in - snr_in).abs() <= 1e-12);
    // Stored audio is float32, so input SNR sits near the requested value.
    for (row, entry) in identity.rows.iter().zip(&manifest.entries) {
        assert!((row.snr_in - entry.snr_db).abs() < 1e-3);
    }

    fs::remove_file(manifest.resolve(&manifest.entries[2].speech_path)).unwrap();
    let (model, cfg) = families().remove(0);
    let ckpt = Trainer::new(model, cfg).unwrap().checkpoint().clone();
    let report = evaluate(
        &Processor::Model {
            config: &ckpt.model,
            params: &ckpt.params,
        },
        &manifest,
    );
    assert_eq!((report.rows.len(), report.skipped), (3, 1));
    assert!(report.errors[0].starts_with(&manifest.entries[2].id));
}

#[test]
fn corpus_generation_is_reproducible_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(&dir.path().join("a"), 2, 21);
    let b = corpus(&dir.path().join("b"), 2, 21);
    assert_eq!(a.entries, b.entries);
    for e in &a.entries {
        for rel in [&e.mixture_path, &e.speech_path, &e.noise_path] {
            assert_eq!(fs::read(a.resolve(rel)).unwrap(), fs::read(b.resolve(rel)).unwrap());
        }
    }
    assert_eq!(
        fs::read(dir.path().join("a/manifest.jsonl")).unwrap(),
        fs::read(dir.path().join("b/manifest.jsonl")).unwrap()
    );
}

#[test]
fn training_reduces_loss_on_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let items = corpus(dir.path(), 2, 3).load_all().unwrap();
    let (model, mut cfg) = families().remove(0);
    cfg.epochs = 8;
    let out = train(&model, &items, &items, &cfg).unwrap();
    assert_eq!(out.log.len(), 8);
    assert!(out.log[7].train_loss < out.log[0].train_loss);
}

#[test]
fn large_corpus_shape_at_sampled_indices() {
    use dnt_core::dataset::{item_id, CorpusBuilder};
    let spec = CorpusSpec {
        speech: SpeechSource::Synthetic { len: 800 },
        noise: NoiseSource::Synthetic(NoiseKind::White),
        count: 35_690,
        snr_range: (0.0, 5.0),
        base_seed: 0,
    };
    let builder = CorpusBuilder::new(spec).unwrap();
    // Items depend only on their index, so probing a few stands in for all.
    for i in [0, 1, 17_845, 35_689] {
        let snr = builder.item(i).unwrap().example.meta.snr_db;
        assert!((0.0..=5.0).contains(&snr), "{i}: {snr}");
    }
    assert_eq!(item_id(35_689), "utt035689");
}

#[test]
fn model_trained_on_clean_input_passes_clean_audio_through() {
    use dnt_core::objective::sdr_proxy;
    use dnt_core::wav::{read_wav, write_wav};
    use dnt_core::Waveform;
    let dir = tempfile::tempdir().unwrap();
    let clean: Vec<_> = (0..3)
        .map(|i| {
            let x = dnt_core::dataset::synth_speech(4000, 50 + i).unwrap();
            dnt_core::dataset::Utterance {
                id: format!("clean{i}"),
                mixture: x.clone(),
                speech: x.clone(),
                noise: Waveform::zeros(x.len()).unwrap(),
            }
        })
        .collect();
    let model = ModelConfig::Tasnet(TasNetConfig::toy(1));
    let mut cfg = TrainConfig::new(CLEAN_EPOCHS, LossSpec::tdl(false));
    cfg.segment_len = 4000;
    cfg.batch_size = 1;
    let out = train(&model, &clean, &[], &cfg).unwrap();

    let held_out = dnt_core::dataset::synth_speech(4000, 99).unwrap();
    let path = dir.path().join("clean.wav");
    write_wav(&path, &held_out).unwrap();
    let input = read_wav(&path).unwrap();
    let enhanced = dnt_core::model::denoise(&model, &out.best.params, &input).unwrap().speech;
    let sdr = sdr_proxy(&input, &enhanced).unwrap();
    assert!(sdr >= 20.0, "{sdr}");
}

const CLEAN_EPOCHS: usize = 200;
