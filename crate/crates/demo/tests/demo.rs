use ctq::model::{oracle_ctq, QueryParams, UserId};
use ctq_demo::Demo;
use serde_json::Value;

fn json(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn leaves_tile_the_region() {
    let d = Demo::new(3, 300, 16).unwrap();
    let r = d.region();
    let area: f64 = json(d.leaves_json())
        .as_array()
        .unwrap()
        .iter()
        .map(|l| {
            (l["x1"].as_f64().unwrap() - l["x0"].as_f64().unwrap())
                * (l["y1"].as_f64().unwrap() - l["y0"].as_f64().unwrap())
        })
        .sum();
    let whole = (r[2] - r[0]) * (r[3] - r[1]);
    assert!((area - whole).abs() <= whole * 1e-9, "{area} vs {whole}");
    let samples: u64 = json(d.leaves_json())
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["samples"].as_u64().unwrap())
        .sum();
    let points: usize = d.dataset().trajectories().iter().map(|t| t.len()).sum();
    assert_eq!(samples as usize, points);
}

#[test]
fn trajectories_round_trip() {
    let d = Demo::new(5, 50, 8).unwrap();
    let tracks = json(d.trajectories_json());
    let tracks = tracks.as_array().unwrap();
    assert_eq!(tracks.len(), d.dataset().len());
    for (t, want) in tracks.iter().zip(d.dataset().trajectories()) {
        assert_eq!(t["user"].as_u64().unwrap(), want.user.0);
        let pts = t["points"].as_array().unwrap();
        assert_eq!(pts.len(), want.len());
        assert_eq!(pts[0][2].as_f64().unwrap() as u64, want.start());
    }
}

#[test]
fn chain_start_traces_like_the_oracle() {
    let d = Demo::new(7, 400, 32).unwrap();
    let user = d.chain_starts()[0];
    let r = json(d.trace_json(user, 10.0, 1800.0, 3));
    assert_eq!(r["matches_oracle"], true);
    let q = d.dataset().get(UserId(user as u64)).unwrap();
    let want = oracle_ctq(d.dataset(), q, &QueryParams::new(10.0, 1800, 3).unwrap());
    assert!(!want.is_empty());
    let got: Vec<u64> = r["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["user"].as_u64().unwrap())
        .collect();
    assert_eq!(got, want.iter().map(|x| x.user.0).collect::<Vec<_>>());
    assert!(r["qr"]["unique_pages"].as_u64().unwrap() > 0);
    assert!(r["qr"]["unique_pages"].as_u64() <= r["baseline"]["unique_pages"].as_u64());
    // every exposed user sits on a page the QR-tree read
    let fetched: Vec<u64> = r["fetched_users"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert!(got.iter().all(|u| fetched.contains(u)));
    let leaves: Vec<u64> = r["touched_leaves"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert!(!leaves.is_empty());
    assert!(leaves.iter().all(|&l| d.qr().tree().node(l as u32).is_leaf()));
}

#[test]
fn nearest_user_picks_the_closest_sample() {
    let d = Demo::new(1, 100, 8).unwrap();
    let t = &d.dataset().trajectories()[17];
    let p = t.points()[0];
    assert_eq!(d.nearest_user(p.x, p.y), Some(t.user.0 as f64));
}

#[test]
fn bad_input_reports_an_error() {
    let d = Demo::new(1, 20, 8).unwrap();
    for s in [
        d.trace_json(1e9, 2.0, 60.0, 1),
        d.trace_json(0.5, 2.0, 60.0, 1),
        d.trace_json(0.0, -1.0, 60.0, 1),
        d.trace_json(0.0, 2.0, 60.0, 0),
        d.trace_json(0.0, 2.0, f64::NAN, 1),
    ] {
        assert!(json(s)["error"].is_string());
    }
}
