import { defineConfig } from "vitest/config";

export default defineConfig({
  // relative asset paths so the bundle works both standalone and mounted
  // under the service's /ui prefix
  base: "./",
  build: {
    outDir: "dist",
    sourcemap: true,
  },
  server: {
    // the annotation service runs separately; proxy API calls to it in dev
    proxy: {
      "/scene": "http://127.0.0.1:8765",
      "/project": "http://127.0.0.1:8765",
      "/objects": "http://127.0.0.1:8765",
      "/frames": "http://127.0.0.1:8765",
      "/edits": "http://127.0.0.1:8765",
    },
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
