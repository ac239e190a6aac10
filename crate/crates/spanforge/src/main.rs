fn main() {
    std::process::exit(spanforge::cli_entry(std::env::args_os()));
}
