fn main() {
    temper::cli::main()
}
