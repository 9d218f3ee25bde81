fn main() {
    std::process::exit(cbfcert_cli::run(std::env::args_os()));
}
