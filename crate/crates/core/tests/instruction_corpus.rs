//! Parses the published instruction samples (fine-tuned, refined and
//! baseline-model outputs) transcribed to plain text under
//! `tests/fixtures/instructions/`.

use std::path::PathBuf;

use taskforge::sections::{canonical_text, full_text, parse_instruction_text};
use taskforge::InstructionSet;

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/instructions")
        .join(format!("{name}.txt"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn parse(name: &str) -> InstructionSet {
    parse_instruction_text(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const FINETUNED: [&str; 5] = [
    "c1_finetuned",
    "c2_finetuned",
    "k1_finetuned",
    "k2_finetuned",
    "k3_finetuned",
];

#[test]
fn finetuned_samples_have_three_sections() {
    for name in FINETUNED {
        let ins = parse(name);
        for (section, text) in [
            ("preprocessing", &ins.preprocessing),
            ("architecture", &ins.architecture),
            ("training", &ins.training),
        ] {
            assert!(!text.trim().is_empty(), "{name}: empty {section}");
        }
    }
}

#[test]
fn extra_sections_are_kept_in_order() {
    let k1 = parse("k1_finetuned");
    assert_eq!(
        k1.extra_sections.keys().collect::<Vec<_>>(),
        ["Additional Information"]
    );
    assert!(k1.extra_sections["Additional Information"].contains("saved in a submission file"));

    let k2 = parse("k2_finetuned");
    let eval = &k2.extra_sections["Model Evaluation and Testing"];
    assert!(eval.starts_with("- The model is evaluated on the test data"));
    assert!(eval.contains("Note: The code provided is just an example"));

    let k3 = parse("k3_finetuned");
    assert!(k3.extra_sections["Model Prediction"].contains("root mean squared error (RMSE)"));
    assert!(!k3.training.contains("Model Prediction"));
}

#[test]
fn repeated_model_evaluation_header_accumulates() {
    let c1 = parse("c1_refined");
    assert_eq!(c1.extra_sections.len(), 1);
    let eval = &c1.extra_sections["Model Evaluation"];
    assert!(eval.contains("evaluate the model on the validation set"));
    assert!(eval.contains("make predictions on the test data"));
    // Nested bullets with inline colons stay inside their section.
    assert!(c1
        .training
        .contains("◦  Loss Function: Use binary cross-entropy"));
}

#[test]
fn prose_baselines_are_rejected() {
    // Untuned baseline outputs are free prose; this is what the re-ask path is for.
    for name in ["c1_baseline", "c2_baseline", "k1_baseline"] {
        let err = parse_instruction_text(&fixture(name)).unwrap_err();
        assert_eq!(err.missing.len(), 3, "{name}: {err}");
    }
}

#[test]
fn merged_sections_are_reported_missing() {
    // "Model Selection and Training" folds two sections into one header.
    let err = parse_instruction_text(&fixture("k3_refined")).unwrap_err();
    assert_eq!(err.missing, ["architecture", "training"]);
    assert!(err
        .found
        .iter()
        .any(|h| h == "Model Selection and Training"));
}

#[test]
fn structured_samples_round_trip() {
    let structured = ["c1", "c2", "k1", "k2", "k3"]
        .iter()
        .flat_map(|p| [format!("{p}_finetuned"), format!("{p}_refined")])
        .filter(|n| n != "k3_refined")
        .chain(["k2_baseline".to_string(), "k3_baseline".to_string()]);
    {
        for name in structured {
            let ins = parse(&name);
            let again = parse_instruction_text(&full_text(&ins)).unwrap();
            assert_eq!(again, ins, "{name}");
            let canonical = parse_instruction_text(&canonical_text(&ins)).unwrap();
            assert!(canonical.extra_sections.is_empty());
            assert_eq!(canonical.training, ins.training);
        }
    }
}
