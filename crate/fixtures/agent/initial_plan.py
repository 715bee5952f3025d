def initial_plan():
  # Step 1: Use Google to find relevant article
  query = "AI chip market 2025 site:techcrunch.com"
  search_result = GoogleSearchTool(query)
  doc = search_result[0]['url']
  # Step 2: Open the link
  VisitTool(doc)
  # Step 3: Scroll until key term appears
  while not TextInspectorTool.contains("growth driver"):
    PageDownTool()
    if too_many_pages_scrolled: break
  # Step 4: Extract and summarize
  paragraphs = FinderTool(keyword="AI chip")
  drivers = TextInspectorTool(text=paragraphs, 
    focus="growth drivers", count=3)
  final_answer(drivers)
