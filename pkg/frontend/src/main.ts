import { boot } from "./ui.js";

void boot();
