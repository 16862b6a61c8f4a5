fn main() {
    std::process::exit(stmc::io::cli_main(std::env::args_os()));
}
