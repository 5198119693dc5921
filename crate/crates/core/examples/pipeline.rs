// The whole pipeline through the run store, as the `demo` command runs it.

use vecuforge::cli::{run_stage, Options, RunStore, Stage};
use vecuforge::reporter;

pub fn run() {
    let dir = std::env::temp_dir().join(format!("vecuforge-example-{}", std::process::id()));
    let opts = Options::new(&dir);
    for stage in Stage::PIPELINE {
        let out = run_stage(stage, &opts).unwrap();
        for m in out.messages {
            println!("{m}");
        }
    }
    let store = RunStore::open(&dir).unwrap();
    let report = reporter::parse_machine(&store.read_text("report.json").unwrap()).unwrap();
    println!("{} failed findings", report.failed().count());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[allow(dead_code)]
fn main() {
    run();
}
