use has_core::activity::{accuracy, train_recognizer};
use has_core::harness::{prepare_data, ExperimentConfig};

#[test]
fn held_out_accuracy_on_clean_windows() {
    let cfg = ExperimentConfig::default();
    let data = prepare_data(&cfg).unwrap();
    let rec = train_recognizer(&data.train);
    let acc = accuracy(&data.eval, &rec).unwrap();
    println!("held-out accuracy {acc:.4} over {} windows", data.eval.len());
    assert!(acc >= 0.80, "accuracy {acc}");
}
