fn main() {
    std::process::exit(fcmad_cli::run(std::env::args_os()));
}
