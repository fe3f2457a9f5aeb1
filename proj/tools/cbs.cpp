#include "cbs/cli.hpp"

int main(int argc, char** argv) { return cbs::dispatch(argc, argv); }
