fn main() {
    std::process::exit(offnet::cli::main_from_env());
}
