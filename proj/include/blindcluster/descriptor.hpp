#pragma once

#include <string>
#include <vector>

namespace blindcluster {

// Anomaly-weighted pooled feature vector for one image.
struct ImageDescriptor {
    std::vector<double> values;
    int image_index = 0;
};

void save_descriptors_csv(const std::vector<ImageDescriptor>& descriptors,
                          const std::vector<std::string>& ids, const std::string& path);
std::vector<ImageDescriptor> load_descriptors_csv(const std::string& path,
                                                  std::vector<std::string>* ids = nullptr);

}  // namespace blindcluster
