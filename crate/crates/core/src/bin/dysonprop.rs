fn main() {
    std::process::exit(dysonprop::cli::main_with_args(std::env::args_os()));
}
