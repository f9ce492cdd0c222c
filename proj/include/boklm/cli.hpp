#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace boklm::cli {

/// Runs one subcommand. Exit codes: 0 success, 1 usage error, 2 runtime
/// error.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

/// The chat REPL against explicit streams (the `chat` subcommand wires
/// std::cin/std::cout). Recognizes /reset, /persona <line>, /quit.
struct ChatArgs {
  std::string checkpoint_path;
  std::string vocab_path;
  int top_k = 8;
  int beam_width = 5;
  int max_len = 40;
  int min_len = 11;
  double length_penalty = 0.1;
  int max_context_tokens = 256;
  std::string transcript_path;  // empty = no transcript
};

int run_chat(const ChatArgs& args, std::istream& in, std::ostream& out);

}  // namespace boklm::cli
