fn main() {
    std::process::exit(contactrom::cli::main_with(std::env::args_os()));
}
