//! Runs every example so they stay working.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run();
        }
    };
}

example!(sim_server);
example!(fingerprint);
example!(risk_analysis);
example!(scenario_language);
example!(attack_vectors);
example!(covering_arrays);
example!(script_validation);
example!(fuzzing);
example!(vuln_scan);
example!(execution);
example!(pipeline);
