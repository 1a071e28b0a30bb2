// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return npva::run_cli(argc, argv, std::cout, std::cerr); }
