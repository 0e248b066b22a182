fn main() {
    std::process::exit(hyperlock::commands::run(std::env::args_os()));
}
