use edge_core::operators::OperatorRegistry;

fn main() {
    let code = edge::cli::run(
        std::env::args_os(),
        &OperatorRegistry::builtin(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
