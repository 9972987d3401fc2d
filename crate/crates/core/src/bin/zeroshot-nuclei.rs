fn main() {
    std::process::exit(zeroshot_nuclei::cli::main_with_args(std::env::args_os()));
}
