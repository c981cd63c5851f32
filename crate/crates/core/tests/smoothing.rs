use liesindy::config::Config;
use liesindy::dynamics::{generate_dataset, Split};
use nalgebra::DMatrix;

fn rms(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

#[test]
fn smoothing_denoises_oscillator_trajectories() {
    let cfg = Config::from_json_str(r#"{"system": "oscillator", "data": {"n_val": 0, "n_test": 0}}"#).unwrap();
    let sys = cfg.ode_system().unwrap();
    let data = generate_dataset(&sys, &cfg.data_settings(&sys), 5).unwrap();
    let train = data.split(Split::Train);
    assert_eq!(train.len(), 50);
    let improved = train
        .iter()
        .filter(|t| rms(t.smoothed.as_ref().unwrap(), &t.clean) < rms(&t.states, &t.clean))
        .count();
    assert!(improved * 100 >= 95 * train.len(), "{improved}/{}", train.len());
}
