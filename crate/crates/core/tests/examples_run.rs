//! Every example must keep running.

macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        #[path = $file]
        mod $name;

        #[test]
        fn $name() {
            $name::run().expect(stringify!($name));
        }
    };
}

example!(play_game, "../examples/play_game.rs");
example!(scripted_session, "../examples/scripted_session.rs");
example!(run_manifest, "../examples/run_manifest.rs");
example!(cassette_llm, "../examples/cassette_llm.rs");
example!(replay_verify, "../examples/replay_verify.rs");
example!(analyze_report, "../examples/analyze_report.rs");
example!(bootstrap_ci, "../examples/bootstrap_ci.rs");
example!(prompt_transcript, "../examples/prompt_transcript.rs");
example!(import_human_traces, "../examples/import_human_traces.rs");
