// SPDX-License-Identifier: Apache-2.0
// Placeholder entry point; the full CLI lands with the pipeline module.
int main() { return 0; }
