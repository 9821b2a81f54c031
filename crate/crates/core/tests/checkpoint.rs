use fcmad::checkpoint::{load_dual, load_fr, peek_variant, save_dual, save_fr};
use fcmad::desk::{DataConfig, Dataset};
use fcmad::loss::VariantTag;
use fcmad::manifest::MorphFamily;
use fcmad::nn::SgdConfig;
use fcmad::synth::{FaceSpace, SynthConfig};
use fcmad::trainer::{train, train_fr, ModelConfig, TrainConfig};

fn setup() -> (Dataset, fcmad::datamine::Corpus) {
    let space = FaceSpace::new(SynthConfig::default(), 4).unwrap();
    let cfg = DataConfig {
        identities: 8,
        images_per_identity: 4,
        ..DataConfig::default()
    };
    let d = Dataset::generate(&space, &cfg, 6).unwrap();
    let corpus = d.corpus(&d.split, &[MorphFamily::Landmark], 1).unwrap();
    (d, corpus)
}

fn tiny(variant: VariantTag) -> ModelConfig {
    ModelConfig {
        variant,
        hidden_dims: vec![16],
        feature_dim: 6,
        ..ModelConfig::default()
    }
}

fn short() -> TrainConfig {
    TrainConfig {
        sgd: SgdConfig {
            epochs: 1,
            batch_size: 8,
            ..SgdConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn dual_round_trip_scores_bit_exactly() {
    let (d, corpus) = setup();
    let dir = tempfile::tempdir().unwrap();
    for variant in VariantTag::ALL {
        let (model, _) = train(&corpus, &tiny(variant), &short(), 3).unwrap();
        let path = dir.path().join(format!("{variant}.ckpt"));
        save_dual(&model, &path).unwrap();
        assert_eq!(peek_variant(&std::fs::read(&path).unwrap()).unwrap(), variant);
        let back = load_dual(&path).unwrap();
        assert_eq!(back, model);
        let faces: Vec<_> = d.all().collect();
        for w in faces.windows(2) {
            let a = model.score_images(&w[0].face.pixels, &w[1].face.pixels).unwrap();
            let b = back.score_images(&w[0].face.pixels, &w[1].face.pixels).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn fr_round_trip_is_exact() {
    let (d, corpus) = setup();
    let dir = tempfile::tempdir().unwrap();
    let (fr, _) = train_fr(&corpus, &tiny(VariantTag::FcV2), &short().sgd, 8).unwrap();
    let path = dir.path().join("fr.ckpt");
    save_fr(&fr, &path).unwrap();
    let back = load_fr(&path).unwrap();
    assert_eq!(back, fr);
    let a = &d.bona_fides[0].face.pixels;
    let b = &d.bona_fides[5].face.pixels;
    assert_eq!(
        fr.similarity(a.pixels(), b.pixels()).unwrap().to_bits(),
        back.similarity(a.pixels(), b.pixels()).unwrap().to_bits()
    );
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (_, corpus) = setup();
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train(&corpus, &tiny(VariantTag::Bc), &short(), 3).unwrap();
    let path = dir.path().join("m.ckpt");
    save_dual(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load_dual(&path).is_err());
    std::fs::write(&path, b"not a checkpoint\n").unwrap();
    assert!(load_dual(&path).is_err());
}
