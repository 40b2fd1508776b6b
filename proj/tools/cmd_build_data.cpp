#include <cstdio>

#include "cdcm/synthetic.hpp"
#include "cli_common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cdcm::cli {

namespace {

struct BuildDataOpts {
  bool modified_cifar10 = false;
  bool synthetic_ppmr = false;
  int normal_class = 8;
  uint64_t seed = 0;
  SourceOpts source;
  std::string out = "data";
  data::SyntheticPpmrOptions ppmr;
};

void run(const BuildDataOpts& o) {
  check_config(o.modified_cifar10 != o.synthetic_ppmr,
               "choose exactly one of --modified-cifar10 / --synthetic-ppmr");
  fs::create_directories(o.out);

  if (o.modified_cifar10) {
    auto store = make_store(o.source);
    json manifest = data::split_manifest(*store, o.normal_class, o.seed);
    manifest["source"] = source_json(o.source);
    write_text(fs::path(o.out) / "manifest.json", manifest.dump(2) + "\n");
    const auto& parts = manifest.at("partitions");
    std::printf("modified-cifar10 manifest written to %s\n",
                (fs::path(o.out) / "manifest.json").c_str());
    std::printf("  normal class %d, seen %s, unseen %s\n", o.normal_class,
                manifest.at("seen_classes").dump().c_str(),
                manifest.at("unseen_classes").dump().c_str());
    std::printf("  train %zu, val %zu, test %zu samples\n", parts.at("train").size(),
                parts.at("val").size(), parts.at("test").size());
    return;
  }

  data::SyntheticPpmrOptions popts = o.ppmr;
  popts.seed = o.seed;
  json manifest = data::generate_synthetic_ppmr(popts, o.out);
  std::printf("synthetic slice dataset written to %s\n", o.out.c_str());
  std::printf("  %d cases + %d controls, %d slices each, %ld anomaly slices\n", popts.n_cases,
              popts.n_controls, popts.slices_per_patient,
              manifest.at("total_anomalies").get<long>());
}

}  // namespace

void register_build_data(CLI::App& app) {
  auto opts = std::make_shared<BuildDataOpts>();
  CLI::App* sub = app.add_subcommand("build-data", "build dataset splits and synthetic data");
  sub->set_config("--config");
  sub->add_flag("--modified-cifar10", opts->modified_cifar10,
                "emit the imbalanced one-class benchmark manifest");
  sub->add_flag("--synthetic-ppmr", opts->synthetic_ppmr,
                "generate the synthetic patient slice dataset");
  sub->add_option("--normal-class", opts->normal_class, "normal class id (0..9)");
  sub->add_option("--seed", opts->seed, "split/generator seed");
  sub->add_option("--source", opts->source.kind, "image source: synthetic | cifar10-bin")
      ->check(CLI::IsMember({"synthetic", "cifar10-bin"}));
  sub->add_option("--source-dir", opts->source.dir, "directory with CIFAR-10 .bin batches");
  sub->add_option("--source-seed", opts->source.seed, "seed of the synthetic image source");
  sub->add_option("--out", opts->out, "output directory");
  sub->add_option("--cases", opts->ppmr.n_cases, "synthetic: number of case patients");
  sub->add_option("--controls", opts->ppmr.n_controls, "synthetic: number of control patients");
  sub->add_option("--slices", opts->ppmr.slices_per_patient, "synthetic: slices per patient");
  sub->add_option("--image-size", opts->ppmr.image_size, "synthetic: square image size");
  sub->callback([opts] { run(*opts); });
}

}  // namespace cdcm::cli
