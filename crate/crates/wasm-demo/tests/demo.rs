use aopsic_wasm_demo::{basis_curves_json, mse_race_json, saleh_fit_json};
use serde_json::Value;

const MIXTURE: &str =
    r#"{"kind":"mixture","components":[{"kind":"complex-gaussian","variance":1.0},{"kind":"qam","order":4}]}"#;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.expect("operation failed")).unwrap()
}

#[test]
fn gaussian_curves_are_laguerre_shaped() {
    let v = parse(basis_curves_json(r#"{"kind":"complex-gaussian","variance":1.0}"#, 7, 3.0, 31));
    assert_eq!(v["effective_rank"], 4);
    let amp = v["amplitude"].as_array().unwrap();
    assert_eq!(amp.len(), 31);
    let curves = v["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 4);
    // φ₁(x) = x for unit variance
    for (a, c) in amp.iter().zip(curves[0].as_array().unwrap()) {
        assert!((a.as_f64().unwrap() - c.as_f64().unwrap()).abs() < 1e-12);
    }
    let density: Vec<f64> = v["density"].as_array().unwrap().iter().map(|d| d.as_f64().unwrap()).collect();
    let mass: f64 = density.iter().sum::<f64>() * 3.0 / density.len() as f64;
    assert!(mass > 0.99 && mass <= 1.0, "{mass}");
}

#[test]
fn qam4_has_rank_one() {
    let v = parse(basis_curves_json(r#"{"kind":"qam","order":4}"#, 7, 2.0, 5));
    assert_eq!(v["effective_rank"], 1);
    assert_eq!(v["curves"].as_array().unwrap().len(), 1);
}

#[test]
fn saleh_fit_improves_with_order() {
    let r: Vec<f64> = [1, 3, 5, 7]
        .iter()
        .map(|&p| parse(saleh_fit_json(3.0, 0.09, p, MIXTURE, 50))["residual_db"].as_f64().unwrap())
        .collect();
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
    assert!(r[3] < -30.0, "{r:?}");
}

#[test]
fn linear_pa_projects_onto_the_first_function() {
    // sample-average projection: cross terms vanish only to O(1/√N)
    let v = parse(saleh_fit_json(2.0, 0.0, 3, r#"{"kind":"qam","order":16}"#, 10));
    assert!(v["residual_db"].as_f64().unwrap() < -30.0, "{}", v["residual_db"]);
    let w1 = &v["weights"][0];
    assert!((w1[0].as_f64().unwrap() - 2.0).abs() < 0.05 && w1[1].as_f64().unwrap().abs() < 0.05, "{w1}");
}

#[test]
fn race_reports_every_canceller() {
    let v = parse(mse_race_json(MIXTURE, 5, 0.01, 3000, 4));
    let samples = v["sample"].as_array().unwrap().len();
    assert!((200..=400).contains(&samples), "{samples}");
    let traces = v["traces"].as_array().unwrap();
    let labels: Vec<&str> = traces.iter().map(|t| t[0].as_str().unwrap()).collect();
    assert_eq!(labels, ["aop", "hp-w", "ih", "hp"]);
    let floor = v["noise_floor_db"].as_f64().unwrap();
    let aop = traces[0][1].as_array().unwrap();
    assert_eq!(aop.len(), samples);
    assert!(aop.last().unwrap().as_f64().unwrap() < floor + 20.0);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    assert!(basis_curves_json("{\"kind\":\"qam\",\"order\":8}", 7, 1.0, 5).is_err());
    assert!(basis_curves_json("not json", 7, 1.0, 5).is_err());
    assert!(mse_race_json(MIXTURE, 4, 0.01, 1000, 1).is_err());
    assert!(saleh_fit_json(-1.0, 0.1, 3, MIXTURE, 5).is_err());
}
