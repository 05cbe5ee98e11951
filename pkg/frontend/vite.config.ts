/// <reference types="vitest/config" />
import { defineConfig } from "vite";

export default defineConfig({
  server: {
    port: 5173,
    proxy: {
      // forward API calls to `linequal serve` during development
      "/sessions": { target: "http://localhost:8080", changeOrigin: true },
    },
  },
  test: {
    environment: "jsdom",
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
