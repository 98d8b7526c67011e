fn main() {
    std::process::exit(secrisk_cli::main_from(std::env::args_os()));
}
