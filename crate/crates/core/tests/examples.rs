//! Every runnable example doubles as a smoke test. The full desk benchmark
//! is excluded; the acceptance suite runs that recipe.

macro_rules! example_test {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }

        #[test]
        fn $name() {
            $name::run_example().unwrap();
        }
    };
}

example_test!(pooling);
example_test!(grad_check);
example_test!(synth_dataset);
example_test!(augmentation);
example_test!(checkpoint);
example_test!(metrics_report);
example_test!(heatmap_overlay);
example_test!(train_and_evaluate);
