//! Regenerates the bundled mock fixtures:
//!
//! ```text
//! cargo run -p editflow-core --example make_fixtures -- fixtures
//! ```
//!
//! Writes a 30-case labelled case set (`cases/`), its transcript
//! (`mock_script.json`), a config using both (`mock.toml`) and the
//! case-independent script the CLI falls back to (`default_mock.json`).

use std::path::PathBuf;

use editflow::backends::{roles, CaseScript, EditorMode, EditorScript, InstanceSpec, MockScript, TRANSPORT_FAILURE};
use editflow::geometry::RelBox;
use editflow::harness::{Case, CaseSet};
use editflow::planner::Route;
use editflow::raster::ImageBuffer;

const DONE: &str = r#"{"status": "success", "is_finished": true, "reasoning": "the requested change is visible"}"#;
const NOT_DONE: &str = r#"{"status": "partial", "is_finished": false, "reasoning": "the change is incomplete"}"#;

struct Spec {
    route: Route,
    category: &'static str,
    instruction: String,
    target: String,
}

fn specs() -> Vec<Spec> {
    let colours = ["red", "blue", "green", "yellow", "purple"];
    let objects = ["mug", "lamp", "book", "vase", "chair", "clock", "plant", "bottle", "bowl", "phone"];
    let mut out = Vec::new();
    for i in 0..30 {
        let obj = objects[i % objects.len()];
        let colour = colours[i % colours.len()];
        let (route, category, instruction) = match i % 6 {
            0 => (Route::ADirect, "scene_wide_consistency", format!("make the whole scene look like a {colour} sunset")),
            1 => (Route::ARewrite, "transformation_complexity", format!("show the {obj} after a year outside")),
            2 | 3 => (Route::BSpatial, "structural_dependency", format!("move the {obj} to the right")),
            _ if i % 12 == 4 => (Route::CLocal, "local_entanglement", format!("make the {obj} {colour}")),
            _ => (
                Route::CLocal,
                if i % 2 == 1 { "hidden_content_reconstruction" } else { "target_ambiguity" },
                format!("reveal what is under the {obj}"),
            ),
        };
        out.push(Spec { route, category, instruction, target: obj.to_string() });
    }
    out
}

fn object_box(i: usize) -> RelBox {
    let x = 100.0 + 50.0 * (i % 5) as f64;
    let y = 150.0 + 40.0 * (i % 4) as f64;
    RelBox::new(x, y, 250.0, 300.0).expect("inside the canvas")
}

fn image(i: usize, rel: &RelBox) -> ImageBuffer {
    let (w, h) = (96u32, 64u32);
    let (x0, y0) = (rel.x() / 1000.0 * w as f64, rel.y() / 1000.0 * h as f64);
    let (x1, y1) = (rel.right() / 1000.0 * w as f64, rel.bottom() / 1000.0 * h as f64);
    let seed = (i * 37) as u32;
    ImageBuffer::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        if fx >= x0 && fx < x1 && fy >= y0 && fy < y1 {
            [(200 + seed % 50) as u8, (40 + seed % 90) as u8, 60, 255]
        } else {
            [(x * 2 + seed % 40) as u8, (y * 3) as u8, (120 + seed % 80) as u8, 255]
        }
    })
    .expect("non-empty image")
}

fn profile(spec: &Spec, multi: bool) -> String {
    let (constraint, scope) = match spec.route {
        Route::ADirect => ("none", "scene_level"),
        Route::ARewrite => ("ambiguity", "scene_level"),
        Route::BSpatial => ("structural_dependency", "localized"),
        Route::CLocal => ("background_coupling", "localized"),
    };
    serde_json::json!({
        "target": spec.target,
        "constraint": constraint,
        "scope": scope,
        "scene_context": "a cluttered desk by a window",
        "small_target": spec.route == Route::CLocal,
        "multi_target": multi,
    })
    .to_string()
}

fn router_reply(i: usize, route: Route) -> String {
    match i % 3 {
        0 => route.code().to_string(),
        1 => format!("Route: {}", route.code()),
        _ => format!("{{\"route\": \"{}\", \"why\": \"fits the constraint\"}}", route.as_str()),
    }
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let mut cases = Vec::new();
    let mut script = MockScript::default();
    for (i, spec) in specs().into_iter().enumerate() {
        let id = format!("case{i:02}");
        let rel = object_box(i);
        let multi = spec.route == Route::CLocal && i % 4 == 0;
        let mut instances = vec![InstanceSpec::rel(rel, 0.92)];
        if multi {
            instances.push(InstanceSpec::rel(RelBox::new(700.0, 600.0, 150.0, 200.0).unwrap(), 0.55));
            instances.push(InstanceSpec::rel(RelBox::new(50.0, 50.0, 100.0, 100.0).unwrap(), 0.2));
        }
        // Every fourth case needs a second attempt; case 6 never satisfies the verifier.
        let verify: &[&str] = match i {
            6 => &[NOT_DONE],
            _ if i % 4 == 1 => &[NOT_DONE, DONE],
            _ => &[DONE],
        };
        let mut cs = CaseScript::default()
            .reply(roles::PROFILE, &[&profile(&spec, multi)])
            .reply(roles::ROUTER, &[&router_reply(i, spec.route)])
            .reply(roles::VERIFY, verify)
            .reply(roles::JUDGE, &[if i % 2 == 0 { "1" } else { "Candidate 2 is better" }])
            .reply(roles::OFFSET, &[if i % 2 == 0 { "[200, 0]" } else { "{\"dx\": 150, \"dy\": -40}" }])
            .reply(roles::REFINE, &["soften the seam around the pasted object"])
            .editor(EditorScript::Mode(EditorMode::Invert))
            .segment(instances);
        if spec.route == Route::ARewrite {
            cs = cs.reply(roles::REWRITE, &[&format!("add rust, fading and dust to the {}", spec.target)]);
        } else {
            cs = cs.reply(roles::REWRITE, &["DIRECT"]);
        }
        if i % 5 == 2 {
            // A flaky completion endpoint: the first profile attempt fails in transit.
            cs = cs.reply(roles::PROFILE, &[TRANSPORT_FAILURE, &profile(&spec, multi)]);
        }
        if i % 10 == 3 {
            cs = cs.reply(roles::PLANNER, &["refine"]);
        }
        let base = (i % 7) as f64 * 0.25;
        for (strategy, bonus) in [("direct", 1.0), ("rewrite", 2.0), ("spatial", 2.5), ("local", 3.0), ("atr", 3.5), ("bo2", 2.0)] {
            let score = format!("{:.2}", base + bonus);
            cs = cs.reply(&format!("{}:{strategy}", roles::SCORE), &[&score]);
        }
        script = script.with_case(&id, cs);
        cases.push(Case {
            id,
            image: image(i, &rel),
            instruction: spec.instruction,
            oracle_route: Some(spec.route),
            category: Some(spec.category.to_string()),
        });
    }
    let set = CaseSet::from_cases(cases).expect("unique ids");
    std::fs::create_dir_all(&out).expect("create output dir");
    let cases_dir = out.join("cases");
    if cases_dir.exists() {
        std::fs::remove_dir_all(&cases_dir).expect("clear old cases");
    }
    set.save(&cases_dir).expect("write cases");
    std::fs::write(out.join("mock_script.json"), serde_json::to_string_pretty(&script).unwrap()).unwrap();

    let default = MockScript::default().with_default(
        CaseScript::default()
            .reply(roles::PROFILE, &[r#"{"target": "the main object", "constraint": "none", "scope": "scene_level", "scene_context": "", "small_target": false, "multi_target": false}"#])
            .reply(roles::ROUTER, &["A"])
            .reply(roles::VERIFY, &[DONE])
            .reply(roles::REWRITE, &["DIRECT"])
            .reply(roles::JUDGE, &["1"])
            .reply(roles::OFFSET, &["[0, 0]"])
            .reply(roles::REFINE, &["blend the edges"])
            .reply(roles::SCORE, &["3"])
            .editor(EditorScript::Mode(EditorMode::Invert))
            .segment(vec![InstanceSpec::rel(RelBox::new(250.0, 250.0, 500.0, 500.0).unwrap(), 0.9)]),
    );
    std::fs::write(out.join("default_mock.json"), serde_json::to_string_pretty(&default).unwrap()).unwrap();
    std::fs::write(
        out.join("mock.toml"),
        "# Offline configuration over the bundled case set.\n\n[backend]\nmode = \"mock\"\nmock_script = \"mock_script.json\"\n\n[harness]\nparallelism = 4\n\n[judge]\nuse_backend = true\n",
    )
    .unwrap();
    println!("wrote {} cases to {}", set.len(), out.display());
}
