#pragma once

#include <string>
#include <vector>

// Command line front end. One verb per invocation:
//   ingest     filter a transaction export, build the split, write it out
//   featurize  produce per-item image and text embedding files
//   train      fit the model, write the best checkpoint and the loss trace
//   evaluate   score a checkpoint on the test split against Pop
//   search     random hyperparameter search, write the winning settings
//   analyze    degree distribution and per-user modality attention reports
//
// Exit codes: 0 success, 1 usage or settings error, 2 missing or bad data.

namespace mars::cli {

// args excludes the program name
int run(const std::vector<std::string>& args);

int run(int argc, const char* const* argv);

}  // namespace mars::cli
