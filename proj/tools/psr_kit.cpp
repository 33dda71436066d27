#include <psrkit/cli.hpp>

int main(int argc, char** argv) { return psrkit::run(argc, argv); }
