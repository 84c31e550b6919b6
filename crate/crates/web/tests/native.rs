use pmodulus_web::{dilatation_field_json, modulus_heatmap_json, ring_curve_json};

#[test]
fn dilatation_field_stays_below_bound() {
    let v = dilatation_field_json(1.0, 2.0, 2.0, 40).unwrap();
    let bound = v["bound"].as_f64().unwrap();
    assert_eq!(bound, 4.0);
    let k: Vec<f64> = v["k_inner"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(k.len(), 40 * 40);
    assert!(k.iter().all(|&x| x <= bound * (1.0 + 1e-12)));
    // the margin is outside the cylinder, where the map is the identity
    assert_eq!(v["region"][0], 0);
    assert_eq!(k[0], 1.0);
    assert_eq!(v["lines"].as_array().unwrap().len(), 20);
    assert!(dilatation_field_json(2.0, 1.0, 2.0, 40).is_err());
    assert!(dilatation_field_json(1.0, 2.0, 2.0, 1).is_err());
}

#[test]
fn heatmap_of_unit_square() {
    let fam = r#"{"kind":"join",
        "from":{"type":"polyline","vertices":[[0,0],[0,1]]},
        "to":{"type":"box","min":[1,0],"max":[1,1]},
        "domain":{"type":"box","min":[0,0],"max":[1,1]}}"#;
    let v = modulus_heatmap_json(fam, 2.0, 16, 0).unwrap();
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() < 1e-2);
    let dims: Vec<u64> = v["dims"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(dims, [16, 16]);
    assert_eq!(v["rho"].as_array().unwrap().len(), 256);
    assert!(modulus_heatmap_json("{", 2.0, 16, 0).is_err());
    assert!(modulus_heatmap_json(fam, 2.0, 500, 0).is_err());
}

#[test]
fn ring_curve_bound_below_exact() {
    let v = ring_curve_json(2, 2.0, 8.0, 50).unwrap();
    let b = v["ring_lower_bound"].as_array().unwrap();
    let e = v["exact"].as_array().unwrap();
    assert_eq!(b.len(), 50);
    for (x, y) in b.iter().zip(e) {
        assert!(x.as_f64().unwrap() <= y.as_f64().unwrap() * (1.0 + 1e-12));
    }
    assert!(ring_curve_json(2, 3.0, 8.0, 50).is_err());
}
