#include "attnlab/attnlab.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "attnlab/config.hpp"
#include "attnlab/error.hpp"
#include "attnlab/experiment.hpp"
#include "attnlab/metrics.hpp"
#include "attnlab/report.hpp"
#include "attnlab/tcas.hpp"
#include "attnlab/toymodel.hpp"

struct attnlab_config {
  attnlab::RunConfig value;
};

struct attnlab_report {
  attnlab::RunReport value;
};

struct attnlab_model {
  attnlab::ModelState value;
};

namespace {

thread_local std::string last_error;

attnlab_status status_of(attnlab::ErrorCode code) {
  switch (code) {
    case attnlab::ErrorCode::invalid_argument: return ATTNLAB_INVALID_ARGUMENT;
    case attnlab::ErrorCode::dimension_mismatch: return ATTNLAB_DIMENSION_MISMATCH;
    case attnlab::ErrorCode::not_found: return ATTNLAB_NOT_FOUND;
    case attnlab::ErrorCode::io: return ATTNLAB_IO_ERROR;
    case attnlab::ErrorCode::numerical: return ATTNLAB_NUMERICAL_ERROR;
    case attnlab::ErrorCode::config: return ATTNLAB_CONFIG_ERROR;
  }
  return ATTNLAB_INTERNAL_ERROR;
}

attnlab_status failure(attnlab_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

template <typename F>
attnlab_status guarded(F&& body) {
  try {
    last_error.clear();
    return body();
  } catch (const attnlab::Error& e) {
    return failure(status_of(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return failure(ATTNLAB_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return failure(ATTNLAB_INTERNAL_ERROR, e.what());
  } catch (...) {
    return failure(ATTNLAB_INTERNAL_ERROR, "unknown failure");
  }
}

attnlab_status copy_out(const std::string& text, char* buffer, size_t capacity, size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  if (buffer == nullptr || capacity < text.size() + 1) {
    return failure(ATTNLAB_BUFFER_TOO_SMALL, "buffer needs " + std::to_string(text.size() + 1) + " bytes");
  }
  std::memcpy(buffer, text.c_str(), text.size() + 1);
  return ATTNLAB_OK;
}

#define ATTNLAB_REQUIRE_ARG(cond, what) \
  if (!(cond)) return failure(ATTNLAB_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* attnlab_version(void) { return ATTNLAB_VERSION; }

const char* attnlab_status_name(attnlab_status status) {
  switch (status) {
    case ATTNLAB_OK: return "ok";
    case ATTNLAB_INVALID_ARGUMENT: return "invalid_argument";
    case ATTNLAB_DIMENSION_MISMATCH: return "dimension_mismatch";
    case ATTNLAB_NOT_FOUND: return "not_found";
    case ATTNLAB_IO_ERROR: return "io";
    case ATTNLAB_NUMERICAL_ERROR: return "numerical";
    case ATTNLAB_CONFIG_ERROR: return "config";
    case ATTNLAB_BUFFER_TOO_SMALL: return "buffer_too_small";
    case ATTNLAB_INTERNAL_ERROR: return "internal";
  }
  return "unknown";
}

const char* attnlab_last_error(void) { return last_error.c_str(); }

attnlab_status attnlab_config_new(const char* kind, attnlab_config** out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(kind != nullptr && out != nullptr, "kind and out must not be NULL");
    auto* c = new attnlab_config{};
    c->value.kind = attnlab::parse_experiment_kind(kind);
    *out = c;
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_config_load(const char* kind, const char* path, attnlab_config** out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(kind != nullptr && path != nullptr && out != nullptr, "arguments must not be NULL");
    auto value = attnlab::load_config(path, attnlab::parse_experiment_kind(kind));
    *out = new attnlab_config{std::move(value)};
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_config_set(attnlab_config* config, const char* key, const char* value) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(config != nullptr && key != nullptr && value != nullptr, "arguments must not be NULL");
    attnlab::apply_config_value(config->value, key, value);
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_config_get(const attnlab_config* config, const char* key, char* buffer, size_t capacity,
                                  size_t* needed) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(config != nullptr && key != nullptr, "config and key must not be NULL");
    for (const auto& [k, v] : attnlab::config_pairs(config->value)) {
      if (k == key) return copy_out(v, buffer, capacity, needed);
    }
    return failure(ATTNLAB_NOT_FOUND, std::string("unknown config key '") + key + "'");
  });
}

void attnlab_config_free(attnlab_config* config) { delete config; }

attnlab_status attnlab_run(const attnlab_config* config, attnlab_report** out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(config != nullptr && out != nullptr, "config and out must not be NULL");
    auto report = attnlab::run_experiment(config->value);
    *out = new attnlab_report{std::move(report)};
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_report_load(const char* path, attnlab_report** out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(path != nullptr && out != nullptr, "path and out must not be NULL");
    *out = new attnlab_report{attnlab::load_report(path)};
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_report_write(const attnlab_report* report, const char* directory) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(report != nullptr && directory != nullptr, "report and directory must not be NULL");
    attnlab::emit_report(report->value, directory);
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_report_json(const attnlab_report* report, char* buffer, size_t capacity, size_t* needed) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(report != nullptr, "report must not be NULL");
    return copy_out(attnlab::report_to_json(report->value), buffer, capacity, needed);
  });
}

attnlab_status attnlab_report_scalar(const attnlab_report* report, const char* name, double* out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(report != nullptr && name != nullptr && out != nullptr, "arguments must not be NULL");
    const auto v = report->value.scalar(name);
    if (!v) return failure(ATTNLAB_NOT_FOUND, std::string("report has no scalar '") + name + "'");
    *out = *v;
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_report_table_rows(const attnlab_report* report, const char* table, size_t* out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(report != nullptr && table != nullptr && out != nullptr, "arguments must not be NULL");
    const attnlab::Table* t = report->value.table(table);
    if (t == nullptr) t = report->value.plot(table);
    if (t == nullptr) return failure(ATTNLAB_NOT_FOUND, std::string("report has no table '") + table + "'");
    *out = t->rows.size();
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_report_wall_clock(const attnlab_report* report, double* seconds) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(report != nullptr && seconds != nullptr, "arguments must not be NULL");
    *seconds = report->value.wall_clock_seconds;
    return ATTNLAB_OK;
  });
}

void attnlab_report_free(attnlab_report* report) { delete report; }

attnlab_status attnlab_model_load(const char* path, attnlab_model** out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(path != nullptr && out != nullptr, "path and out must not be NULL");
    *out = new attnlab_model{attnlab::load_checkpoint(path)};
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_model_save(const attnlab_model* model, const char* path) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(model != nullptr && path != nullptr, "model and path must not be NULL");
    attnlab::save_checkpoint(model->value, path);
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_model_info(const attnlab_model* model, size_t* layers, size_t* heads_per_layer,
                                  size_t* parameters, uint64_t* step) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(model != nullptr, "model must not be NULL");
    if (layers != nullptr) *layers = model->value.config.layers;
    if (heads_per_layer != nullptr) *heads_per_layer = model->value.config.heads_per_layer;
    if (parameters != nullptr) *parameters = model->value.params.size();
    if (step != nullptr) *step = model->value.step;
    return ATTNLAB_OK;
  });
}

void attnlab_model_free(attnlab_model* model) { delete model; }

attnlab_status attnlab_span_iou(size_t start1, size_t end1, size_t start2, size_t end2, double* out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(out != nullptr, "out must not be NULL");
    *out = attnlab::iou(attnlab::to_interval(start1, end1), attnlab::to_interval(start2, end2));
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_pearson(const double* xs, const double* ys, size_t n, double* r, double* p_value) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(xs != nullptr && ys != nullptr && r != nullptr, "xs, ys and r must not be NULL");
    *r = attnlab::pearson({xs, n}, {ys, n});
    if (p_value != nullptr) *p_value = attnlab::pearson_p_value(*r, n);
    return ATTNLAB_OK;
  });
}

attnlab_status attnlab_token_loss(const double* pos, size_t n_pos, const double* neg, size_t n_neg, double margin,
                                  double* out) {
  return guarded([&] {
    ATTNLAB_REQUIRE_ARG(out != nullptr, "out must not be NULL");
    ATTNLAB_REQUIRE_ARG((pos != nullptr || n_pos == 0) && (neg != nullptr || n_neg == 0),
                        "pos and neg must not be NULL when nonempty");
    *out = attnlab::token_loss({pos, n_pos}, {neg, n_neg}, margin);
    return ATTNLAB_OK;
  });
}

}  // extern "C"
