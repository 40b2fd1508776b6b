#include <cstdio>
#include <exception>

#include "cli_common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cdcm: center-based contrastive metric anomaly detection framework"};
  app.require_subcommand(1);

  cdcm::cli::register_build_data(app);
  cdcm::cli::register_train(app);
  cdcm::cli::register_evaluate(app);
  cdcm::cli::register_compare(app);
  cdcm::cli::register_report(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cdcm::cli::kExitOk : cdcm::cli::kExitConfig;
  } catch (const cdcm::cli::AbortExit& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return cdcm::cli::kExitAbort;
  } catch (const cdcm::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return cdcm::cli::kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return cdcm::cli::kExitConfig;
  }
  return cdcm::cli::kExitOk;
}
