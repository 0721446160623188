fn main() {
    std::process::exit(primes_cli::run(std::env::args_os()));
}
