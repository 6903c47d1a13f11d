use std::sync::OnceLock;

use serde_json::Value;
use symop::bundle::{bundle_from_str, bundle_to_string, load_bundle, save_bundle, BundleError, ModelBundle};
use symop::corpus::{generate_demos, CorpusGenConfig};
use symop::latent::LossConfig;
use symop::pipeline::{learn_operators, LearnConfig, Operators};

fn trained() -> &'static (Operators, ModelBundle) {
    static CELL: OnceLock<(Operators, ModelBundle)> = OnceLock::new();
    CELL.get_or_init(|| {
        let gen = CorpusGenConfig::table1_mix(300, 8, 0.25);
        let corpus = generate_demos(&gen, 3).unwrap();
        let cfg = LearnConfig { latent_dim: 4, ..LearnConfig::default() }.with_seed(3);
        let (ops, _) = learn_operators(&corpus, &cfg).unwrap();
        let bundle = ModelBundle::from_operators(&ops, Some(gen), LossConfig::default());
        (ops, bundle)
    })
}

fn edited(f: impl FnOnce(&mut Value)) -> String {
    let mut v: Value = serde_json::from_str(&bundle_to_string(&trained().1).unwrap()).unwrap();
    f(&mut v);
    serde_json::to_string_pretty(&v).unwrap()
}

fn field_of(err: BundleError) -> &'static str {
    match err {
        BundleError::Validation { field, .. } => field,
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn save_then_load_is_bit_exact() {
    let (ops, bundle) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_bundle(bundle, &path).unwrap();
    let loaded = load_bundle(&path).unwrap();
    assert_eq!(&loaded, bundle);
    let restored = loaded.to_operators().unwrap();
    assert_eq!(&restored, ops);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(restored.encoder.params()), bits(ops.encoder.params()));
    for (a, b) in restored.transitions.action_matrices.iter().zip(&ops.transitions.action_matrices) {
        assert_eq!(bits(a.as_slice().unwrap()), bits(b.as_slice().unwrap()));
    }
    // Saving the loaded bundle reproduces the file byte for byte.
    let again = dir.path().join("again.json");
    save_bundle(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn newer_major_version_is_rejected() {
    let text = edited(|v| v["format_version"] = "2.0".into());
    assert!(matches!(bundle_from_str(&text), Err(BundleError::Version { found }) if found == "2.0"));
    let minor = edited(|v| v["format_version"] = "1.3".into());
    assert!(bundle_from_str(&minor).is_ok());
}

#[test]
fn truncated_file_reports_byte_offset() {
    let text = bundle_to_string(&trained().1).unwrap();
    let cut = &text[..text.len() / 2];
    match bundle_from_str(cut) {
        Err(BundleError::Parse { offset, line, .. }) => {
            assert!(offset > 0 && offset <= cut.len(), "offset {offset} of {}", cut.len());
            assert_eq!(line, cut[..offset.min(cut.len())].matches('\n').count() + 1);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn missing_file_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_bundle(&dir.path().join("absent.json")).unwrap_err();
    assert!(matches!(err, BundleError::NotFound(_)), "{err}");
}

#[test]
fn inconsistent_dimensions_name_the_field() {
    let cases: Vec<(&str, String)> = vec![
        ("D", edited(|v| v["encoder"]["input_dim"] = (v["encoder"]["input_dim"].as_u64().unwrap() + 1).into())),
        ("L", edited(|v| v["states"]["means"][0].as_array_mut().unwrap().push(0.0.into()))),
        (
            "M",
            edited(|v| {
                v["transitions"]["counts"].as_array_mut().unwrap().pop();
            }),
        ),
        (
            "N",
            edited(|v| {
                v["transitions"]["group_names"].as_array_mut().unwrap().pop();
            }),
        ),
        ("action_matrices", edited(|v| v["transitions"]["action_matrices"]["Insert"][0][0] = 0.5.into())),
    ];
    for (field, text) in cases {
        assert_eq!(field_of(bundle_from_str(&text).unwrap_err()), field);
    }
}
