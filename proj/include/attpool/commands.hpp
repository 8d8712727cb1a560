#ifndef ATTPOOL_COMMANDS_HPP
#define ATTPOOL_COMMANDS_HPP

#include <map>
#include <string>

namespace attpool {

// Command implementations behind the CLI. They print human-readable results
// to stdout and throw ConfigError / DataError / FormatError on bad inputs;
// the binary maps those to exit codes 2 and 3. Gradcheck failures return 4.

int cmd_synth(const std::string& spec_path, const std::string& out_dir);

// overrides: optional `pooling`, `attention`, `seed` values (CLI flags beat
// the config file). Writes the checkpoint to out_path and the metrics log to
// out_path + ".metrics".
int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path,
              const std::map<std::string, std::string>& overrides);

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& flip, const std::string& metrics_out);

int cmd_gradcheck(const std::string& module, double tol);

int cmd_export_attention(const std::string& ckpt_path,
                         const std::string& data_dir,
                         const std::string& out_dir, bool per_class);

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& lambdas_csv);

}  // namespace attpool

#endif
